"""Forced-type behavior analysis: what does the network predict when every
sample's type input is overridden to a single value?"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np

from ..ctc import greedy_decode
from ..errors import ConfigurationError
from ..formset import DEFAULT_MIN_WIDTH, SampleRecord, preprocess, tile_to_width
from ..imaging import GrayImage
from ..typedgen import Alphabet, ContentType
from .model import ArchConfig, ModelParams, forward_batch, images_to_tensor, type_onehot, valid_columns


def forced_type_histogram(
    params: ModelParams,
    arch: ArchConfig,
    records: list[SampleRecord],
    base_dir: str | Path,
    forced: ContentType,
    alphabet: Alphabet,
    min_width: int = DEFAULT_MIN_WIDTH,
    batch_size: int = 64,
) -> dict[str, int]:
    """Decode every record with the type input forced to `forced`; return
    aggregate counts of predicted symbols."""
    if not arch.type_input_enabled:
        raise ConfigurationError("cannot force a content type on a type-disabled architecture")
    base_dir = Path(base_dir)
    counts: Counter[str] = Counter()

    buckets: dict[int, list[tuple[GrayImage, int]]] = {}
    for rec in records:
        img = GrayImage.load_png(base_dir / rec.image_path)
        processed, width = preprocess(img, min_width)
        target = -(-processed.width // arch.horizontal_factor) * arch.horizontal_factor
        processed = tile_to_width(processed, target)
        buckets.setdefault(processed.width, []).append((processed, width))

    onehot = type_onehot(forced, arch.num_types)
    for bucket_width in sorted(buckets):
        items = buckets[bucket_width]
        for lo in range(0, len(items), batch_size):
            chunk = items[lo : lo + batch_size]
            images = images_to_tensor([c[0] for c in chunk])
            types = np.repeat(onehot[None, :], len(chunk), axis=0)
            logits, _ = forward_batch(params, arch, images, types)
            for k, (_, width) in enumerate(chunk):
                v = valid_columns(width, arch, logits.shape[1])
                counts.update(greedy_decode(logits[k], v, alphabet))
    return dict(counts)


def digit_fraction(histogram: dict[str, int]) -> float:
    """Share of predicted symbols that are digits; 0.0 for an empty histogram."""
    total = sum(histogram.values())
    if total == 0:
        return 0.0
    digits = sum(count for ch, count in histogram.items() if ch.isdigit())
    return digits / total
