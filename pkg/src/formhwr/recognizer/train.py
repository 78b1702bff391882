"""From-scratch training loop: Adam, stepped exponential LR decay, validation
CER tracking, best-checkpoint selection. Fully deterministic under a seed."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ctc import greedy_decode
from ..errors import TrainingDivergedError
from ..formset import (
    Batch,
    DEFAULT_MIN_WIDTH,
    SampleRecord,
    preprocess,
    read_manifest,
    tile_to_width,
)
from ..imaging import GrayImage
from ..metrics import EvalPair, cer
from ..rng import SeedStream
from ..typedgen import Alphabet
from .checkpoint import save_checkpoint
from .model import (
    ArchConfig,
    ModelParams,
    forward_batch,
    images_to_tensor,
    init_params,
    loss_and_grads,
    type_onehot,
    valid_columns,
)


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.001
    lr_decay_factor: float = 0.9
    lr_decay_every: int = 5000
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iterations: int = 1000
    seed: int = 0
    val_fraction: float = 0.1
    val_every: int = 100
    min_width: int = DEFAULT_MIN_WIDTH
    target_val_cer: float | None = None  # stop early once validation reaches this

    def __post_init__(self):
        if not (0.0 < self.lr_decay_factor <= 1.0):
            raise ValueError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def lr_at(config: TrainerConfig, iteration: int) -> float:
    """alpha * decay^floor(iteration / decay_every); iterations count from 0."""
    return config.learning_rate * config.lr_decay_factor ** (iteration // config.lr_decay_every)


class Adam:
    def __init__(self, params: ModelParams, config: TrainerConfig):
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in params.trainable_names()}
        self.v = {n: np.zeros_like(params[n]) for n in params.trainable_names()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class _Sample:
    index: int
    image: GrayImage
    width: int
    label: list[int]
    ctype: object
    text: str


def _load_samples(
    records: list[SampleRecord],
    base_dir: Path,
    alphabet: Alphabet,
    min_width: int,
    width_multiple: int,
) -> list[_Sample]:
    samples = []
    for idx, rec in enumerate(records):
        img = GrayImage.load_png(base_dir / rec.image_path)
        processed, width = preprocess(img, min_width)
        target = -(-processed.width // width_multiple) * width_multiple
        processed = tile_to_width(processed, target)
        samples.append(
            _Sample(idx, processed, width, alphabet.encode(rec.text), rec.ctype, rec.text)
        )
    return samples


def _batches_from(samples: list[_Sample], batch_size: int) -> list[Batch]:
    buckets: dict[int, list[_Sample]] = {}
    for s in samples:
        buckets.setdefault(s.image.width, []).append(s)
    out = []
    for width in sorted(buckets):
        group = buckets[width]
        for lo in range(0, len(group), batch_size):
            chunk = group[lo : lo + batch_size]
            out.append(
                Batch(
                    images=[c.image for c in chunk],
                    widths=[c.width for c in chunk],
                    labels=[c.label for c in chunk],
                    types=[c.ctype for c in chunk],
                )
            )
    return out


def _epoch_batches(samples, batch_size, rng):
    """Shuffled width-bucketed batches; partial buckets flush at epoch end."""
    order = list(range(len(samples)))
    rng.shuffle(order)
    accumulators: dict[int, list[_Sample]] = {}
    for idx in order:
        s = samples[idx]
        bucket = accumulators.setdefault(s.image.width, [])
        bucket.append(s)
        if len(bucket) == batch_size:
            yield _batches_from(bucket, batch_size)[0], [x.index for x in bucket]
            accumulators[s.image.width] = []
    for width in sorted(accumulators):
        bucket = accumulators[width]
        if bucket:
            yield _batches_from(bucket, batch_size)[0], [x.index for x in bucket]


def evaluate_cer(
    params: ModelParams,
    arch: ArchConfig,
    samples: list[_Sample],
    alphabet: Alphabet,
    batch_size: int = 64,
) -> float:
    """Greedy-decode CER (percent) over a sample list."""
    pairs = []
    for batch in _batches_from(samples, batch_size):
        types = None
        if arch.type_input_enabled:
            types = np.stack([type_onehot(t, arch.num_types) for t in batch.types])
        logits, _ = forward_batch(params, arch, images_to_tensor(batch.images), types)
        for k in range(len(batch)):
            v = valid_columns(batch.widths[k], arch, logits.shape[1])
            pred = greedy_decode(logits[k], v, alphabet)
            pairs.append(EvalPair(pred, alphabet.decode(batch.labels[k]), batch.types[k]))
    return cer(pairs)


@dataclass
class TrainResult:
    log: list[dict]
    best_val_cer: float | None
    checkpoint_path: Path


def train(
    arch: ArchConfig,
    trainer: TrainerConfig,
    manifest_path: str | Path,
    checkpoint_out: str | Path,
    alphabet: Alphabet | None = None,
    log_out: str | Path | None = None,
) -> TrainResult:
    """Train from a dataset manifest; writes the best-validation checkpoint.

    Stream layout under the trainer seed: index 0 drives the train/val
    split, index 1 the parameter init, index 2+e the shuffle of epoch e.
    """
    alphabet = alphabet or Alphabet.default()
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    samples = _load_samples(
        records, manifest_path.parent, alphabet, trainer.min_width, arch.horizontal_factor
    )

    split_rng = SeedStream(trainer.seed, 0).rng()
    order = list(range(len(samples)))
    split_rng.shuffle(order)
    n_val = int(round(trainer.val_fraction * len(samples))) if len(samples) >= 10 else 0
    val_samples = [samples[i] for i in order[:n_val]]
    train_samples = [samples[i] for i in order[n_val:]]
    if not train_samples:
        raise TrainingDivergedError("no training samples in manifest")

    params = init_params(arch, SeedStream(trainer.seed, 1).sub_seed)
    adam = Adam(params, trainer)
    log: list[dict] = []
    best_val = math.inf
    best_params: ModelParams | None = None

    iteration = 0
    epoch = 0
    done = False
    while iteration < trainer.max_iterations and not done:
        epoch_rng = SeedStream(trainer.seed, 2 + epoch).rng()
        for batch, batch_ids in _epoch_batches(train_samples, trainer.batch_size, epoch_rng):
            try:
                loss, grads, _ = loss_and_grads(params, arch, batch)
            except ValueError as exc:
                # non-finite activations surface as logit validation errors
                raise TrainingDivergedError(
                    f"numeric failure at iteration {iteration}: {exc}", batch_ids=batch_ids
                ) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at iteration {iteration}", batch_ids=batch_ids
                )
            lr = lr_at(trainer, iteration)
            adam.step(params, grads, lr)
            entry = {"iteration": iteration, "loss": loss, "lr": lr}
            if val_samples and (iteration + 1) % trainer.val_every == 0:
                val_cer = evaluate_cer(params, arch, val_samples, alphabet)
                entry["val_cer"] = val_cer
                if val_cer < best_val:
                    best_val = val_cer
                    best_params = params.copy()
                if trainer.target_val_cer is not None and val_cer <= trainer.target_val_cer:
                    log.append(entry)
                    iteration += 1
                    done = True
                    break
            log.append(entry)
            iteration += 1
            if iteration >= trainer.max_iterations:
                break
        epoch += 1

    final_params = best_params if best_params is not None else params
    checkpoint_out = Path(checkpoint_out)
    save_checkpoint(final_params, arch, alphabet, checkpoint_out)
    if log_out is not None:
        with open(log_out, "w", encoding="utf-8", newline="\n") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return TrainResult(
        log=log,
        best_val_cer=None if math.isinf(best_val) else best_val,
        checkpoint_path=checkpoint_out,
    )
