"""Versioned JSON checkpoints: architecture, alphabet, and named tensors.

JSON floats round-trip exactly (shortest-repr serialization), so
load(save(params)) reproduces every tensor bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import (
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
)
from ..typedgen import Alphabet
from .model import ArchConfig, ModelParams, init_params

CHECKPOINT_VERSION = 1


def save_checkpoint(
    params: ModelParams, arch: ArchConfig, alphabet: Alphabet, path: str | Path
) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch": arch.to_json_dict(),
        "alphabet": list(alphabet.symbols),
        "tensors": {
            name: {"shape": list(t.shape), "values": t.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }
    Path(path).write_text(json.dumps(doc), "utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ArchConfig, Alphabet]:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointCorruptError(f"checkpoint {path} has no version field")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {doc['version']} unsupported (expected {CHECKPOINT_VERSION})"
        )
    try:
        arch = ArchConfig.from_json_dict(doc["arch"])
        alphabet = Alphabet(tuple(doc["alphabet"]))
        tensors = {}
        for name, spec in doc["tensors"].items():
            values = np.array(spec["values"], dtype=np.float64)
            tensors[name] = values.reshape(spec["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"checkpoint {path} is malformed: {exc}") from exc

    expected = init_params(arch, 0)
    expected_shapes = {n: t.shape for n, t in expected.tensors.items()}
    actual_shapes = {n: t.shape for n, t in tensors.items()}
    if expected_shapes != actual_shapes:
        missing = set(expected_shapes) - set(actual_shapes)
        extra = set(actual_shapes) - set(expected_shapes)
        mismatched = {
            n: (actual_shapes[n], expected_shapes[n])
            for n in set(actual_shapes) & set(expected_shapes)
            if actual_shapes[n] != expected_shapes[n]
        }
        raise CheckpointShapeError(
            f"checkpoint tensors inconsistent with architecture: "
            f"missing={sorted(missing)} extra={sorted(extra)} mismatched={mismatched}"
        )
    if alphabet.num_classes != arch.num_classes:
        raise CheckpointShapeError(
            f"alphabet has {alphabet.num_classes} classes but arch declares {arch.num_classes}"
        )
    return ModelParams(tensors), arch, alphabet
