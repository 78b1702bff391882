"""Batch transcription of manifest records with a trained model."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..ctc import greedy_decode
from ..formset import DEFAULT_MIN_WIDTH, SampleRecord, preprocess, tile_to_width
from ..imaging import GrayImage
from ..typedgen import Alphabet
from .model import (
    ArchConfig,
    ModelParams,
    forward_batch,
    images_to_tensor,
    type_onehot,
    valid_columns,
)


def transcribe_records(
    params: ModelParams,
    arch: ArchConfig,
    records: list[SampleRecord],
    base_dir: str | Path,
    alphabet: Alphabet,
    min_width: int = DEFAULT_MIN_WIDTH,
    batch_size: int = 64,
) -> list[str]:
    """Greedy transcription for each record, in input order.

    Typed architectures condition on each record's own content type.
    """
    base_dir = Path(base_dir)
    prepared = []  # (order, image, width, ctype)
    for order, rec in enumerate(records):
        img = GrayImage.load_png(base_dir / rec.image_path)
        processed, width = preprocess(img, min_width)
        target = -(-processed.width // arch.horizontal_factor) * arch.horizontal_factor
        processed = tile_to_width(processed, target)
        prepared.append((order, processed, width, rec.ctype))

    predictions: list[str | None] = [None] * len(records)
    buckets: dict[int, list] = {}
    for item in prepared:
        buckets.setdefault(item[1].width, []).append(item)
    for bucket_width in sorted(buckets):
        items = buckets[bucket_width]
        for lo in range(0, len(items), batch_size):
            chunk = items[lo : lo + batch_size]
            images = images_to_tensor([c[1] for c in chunk])
            types = None
            if arch.type_input_enabled:
                types = np.stack([type_onehot(c[3], arch.num_types) for c in chunk])
            logits, _ = forward_batch(params, arch, images, types)
            for k, (order, _, width, _) in enumerate(chunk):
                v = valid_columns(width, arch, logits.shape[1])
                predictions[order] = greedy_decode(logits[k], v, alphabet)
    return predictions  # type: ignore[return-value]


@lru_cache(maxsize=2)
def _cached_checkpoint(path: str):
    from .checkpoint import load_checkpoint

    return load_checkpoint(path)


def _transcribe_shard(args):
    checkpoint_path, records, base_dir, min_width = args
    params, arch, alphabet = _cached_checkpoint(checkpoint_path)
    return transcribe_records(params, arch, records, base_dir, alphabet, min_width=min_width)


def transcribe_manifest(
    checkpoint_path: str | Path,
    records: list[SampleRecord],
    base_dir: str | Path,
    min_width: int = DEFAULT_MIN_WIDTH,
    workers: int = 1,
) -> list[str]:
    """Transcribe records with the checkpoint at `checkpoint_path`.

    With workers > 1, contiguous record shards run in worker processes.
    Each sample's transcription depends only on its own inputs, so the
    result is identical for any worker count.
    """
    checkpoint_path = str(checkpoint_path)
    if workers <= 1 or len(records) < 2:
        params, arch, alphabet = _cached_checkpoint(checkpoint_path)
        return transcribe_records(
            params, arch, records, base_dir, alphabet, min_width=min_width
        )
    chunk = -(-len(records) // workers)
    jobs = [
        (checkpoint_path, records[lo : lo + chunk], str(base_dir), min_width)
        for lo in range(0, len(records), chunk)
    ]
    out: list[str] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_transcribe_shard, jobs):
            out.extend(part)
    return out
