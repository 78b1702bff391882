"""Command-line entry point wiring the toolkit's workflows.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure
during training, 4 non-conforming document at alignment.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from collections import Counter
from pathlib import Path

import click
import numpy as np

from .alignkit import IcpConfig, assign_types, detect_squares, icp_align
from .errors import (
    CheckpointError,
    ConfigurationError,
    FormhwrError,
    GenerationError,
    LabelEncodingError,
    NonConformingDocumentError,
    TrainingDivergedError,
)
from .formset import FormTemplate, GenConfig, emit_dataset, read_manifest
from .imaging import GrayImage, Rect
from .metrics import EvalPair, report
from .recognizer import (
    ArchConfig,
    TrainerConfig,
    digit_fraction,
    forced_type_histogram,
    load_checkpoint,
    train,
)
from .recognizer.infer import transcribe_records
from .typedgen import Alphabet, ContentType, TypeWeights

CONFIG_ENV_VAR = "FORMHWR_CONFIG"

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NONCONFORMING = 4


def _load_global_config(explicit: str | None) -> dict:
    path = explicit or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def handle_errors(fn):
    """Map toolkit exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NonConformingDocumentError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NONCONFORMING)
        except TrainingDivergedError as exc:
            click.echo(f"error: {exc}", err=True)
            if exc.batch_ids:
                click.echo(f"offending batch sample ids: {exc.batch_ids}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (ConfigurationError, CheckpointError, GenerationError, LabelEncodingError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except FormhwrError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


@click.group()
def main():
    """Synthetic form data, type-aware recognition, and template alignment."""


def _resolve_alphabet(alphabet_path: str | None, cfg: dict) -> Alphabet:
    path = alphabet_path or cfg.get("alphabet")
    return Alphabet.from_file(path) if path else Alphabet.default()


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


@main.command("generate")
@click.option("--count", type=int, required=True, help="Number of samples to emit.")
@click.option("--template", "template_path", type=click.Path(exists=True), required=True)
@click.option("--weights", "weights_path", type=click.Path(exists=True), default=None,
              help="JSON map of type name to fraction; defaults to the measured distribution.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--fonts-dir", type=click.Path(exists=True), default=None)
@click.option("--lexicons-dir", type=click.Path(exists=True), default=None)
@click.option("--alphabet", "alphabet_path", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help=f"Global JSON config (or ${CONFIG_ENV_VAR}); flags win.")
@handle_errors
def cmd_generate(count, template_path, weights_path, seed, out_dir, fonts_dir,
                 lexicons_dir, alphabet_path, workers, config_path):
    """Emit a synthetic dataset (images plus JSON Lines manifest)."""
    cfg = _load_global_config(config_path)
    template = FormTemplate.load(template_path)
    if weights_path:
        weights = TypeWeights.from_json_dict(json.loads(Path(weights_path).read_text("utf-8")))
    else:
        weights = TypeWeights.default()
    gen_config = GenConfig(
        lexicons_dir=lexicons_dir or cfg.get("lexicons_dir"),
        fonts_dir=fonts_dir or cfg.get("fonts_dir"),
        alphabet_file=alphabet_path or cfg.get("alphabet"),
    )
    manifest = emit_dataset(
        count, template, weights, gen_config, seed, out_dir,
        workers=workers, template_dir=Path(template_path).parent,
    )
    counts = Counter(rec.ctype for rec in read_manifest(manifest))
    click.echo(f"wrote {count} samples to {out_dir}")
    click.echo(f"{'Type':<16}{'Count':>7}")
    for ctype in ContentType:
        click.echo(f"{ctype.wire_name:<16}{counts.get(ctype, 0):>7}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


@main.command("train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "checkpoint_out", type=click.Path(), required=True)
@click.option("--arch-config", "arch_path", type=click.Path(exists=True), default=None,
              help="JSON architecture description; defaults to the desk-scale network.")
@click.option("--untyped", is_flag=True, help="Disable the content-type input.")
@click.option("--iterations", type=int, default=1000, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=0.001, show_default=True)
@click.option("--lr-decay", type=float, default=0.9, show_default=True)
@click.option("--lr-decay-every", type=int, default=5000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--min-width", type=int, default=256, show_default=True)
@click.option("--val-every", type=int, default=100, show_default=True)
@click.option("--alphabet", "alphabet_path", type=click.Path(exists=True), default=None)
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Training log (JSON Lines) output path.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@handle_errors
def cmd_train(manifest_path, checkpoint_out, arch_path, untyped, iterations, batch_size,
              lr, lr_decay, lr_decay_every, seed, min_width, val_every, alphabet_path,
              log_path, config_path):
    """Train the recognizer on a dataset manifest."""
    cfg = _load_global_config(config_path)
    alphabet = _resolve_alphabet(alphabet_path, cfg)
    if arch_path:
        arch = ArchConfig.from_json_dict(json.loads(Path(arch_path).read_text("utf-8")))
    else:
        arch = ArchConfig.desk_default(
            num_classes=alphabet.num_classes, type_input_enabled=not untyped
        )
    trainer = TrainerConfig(
        learning_rate=lr,
        lr_decay_factor=lr_decay,
        lr_decay_every=lr_decay_every,
        batch_size=batch_size,
        max_iterations=iterations,
        seed=seed,
        val_every=val_every,
        min_width=min_width,
    )
    result = train(arch, trainer, manifest_path, checkpoint_out, alphabet, log_out=log_path)
    final_loss = result.log[-1]["loss"] if result.log else float("nan")
    click.echo(f"trained {len(result.log)} iterations; final loss {final_loss:.4f}")
    if result.best_val_cer is not None:
        click.echo(f"best validation CER: {result.best_val_cer:.2f}%")
    click.echo(f"checkpoint: {result.checkpoint_path}")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--report-out", "report_out", type=click.Path(), required=True,
              help="Output path prefix; writes <prefix>.json and <prefix>.txt.")
@click.option("--min-width", type=int, default=256, show_default=True)
@handle_errors
def cmd_eval(checkpoint_path, manifest_path, report_out, min_width):
    """Transcribe a manifest with a checkpoint and write the metric report."""
    params, arch, alphabet = load_checkpoint(checkpoint_path)
    records = read_manifest(manifest_path)
    for rec in records:
        for ch in rec.text:
            if ch not in alphabet:
                raise ConfigurationError(
                    f"manifest text {rec.text!r} contains {ch!r}, absent from the "
                    "checkpoint alphabet"
                )
    predictions = transcribe_records(
        params, arch, records, Path(manifest_path).parent, alphabet, min_width=min_width
    )
    pairs = [EvalPair(p, rec.text, rec.ctype) for p, rec in zip(predictions, records)]
    rep = report(pairs)
    json_path = Path(f"{report_out}.json")
    text_path = Path(f"{report_out}.txt")
    json_path.write_text(rep.to_json() + "\n", "utf-8")
    text_path.write_text(rep.to_text(), "utf-8")
    click.echo(rep.to_text())
    click.echo(f"report written to {json_path} and {text_path}")


# ---------------------------------------------------------------------------
# align
# ---------------------------------------------------------------------------


@main.command("align")
@click.option("--template", "template_path", type=click.Path(exists=True), required=True)
@click.option("--scan", "scan_path", type=click.Path(exists=True), required=True)
@click.option("--boxes", "boxes_path", type=click.Path(exists=True), required=True,
              help="JSON list of {x, y, w, h} handwritten-text boxes in scan coordinates.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--crops-dir", type=click.Path(), default=None,
              help="Also write per-box crops of the scan here.")
@click.option("--square-size-min", type=float, default=None)
@click.option("--square-size-max", type=float, default=None)
@click.option("--reject-threshold", type=float, default=5.0, show_default=True)
@handle_errors
def cmd_align(template_path, scan_path, boxes_path, out_path, crops_dir,
              square_size_min, square_size_max, reject_threshold):
    """Align a scan to its template and type the provided text boxes."""
    template = FormTemplate.load(template_path)
    scan = GrayImage.load_png(scan_path)
    boxes_doc = json.loads(Path(boxes_path).read_text("utf-8"))
    boxes = [Rect(b["x"], b["y"], b["w"], b["h"]) for b in boxes_doc]

    sides = [s.side for s in template.squares]
    lo = square_size_min if square_size_min is not None else min(sides) * 0.4
    hi = square_size_max if square_size_max is not None else max(sides) * 2.5
    detections = detect_squares(scan, (lo, hi))
    if len(detections) < 3:
        raise NonConformingDocumentError(
            f"found only {len(detections)} marker squares in the scan (need >= 3)"
        )
    scan_pts = np.array([d.center for d in detections])
    transform, residual = icp_align(
        template.square_centers(), scan_pts, IcpConfig(reject_threshold=reject_threshold)
    )
    typed = assign_types(boxes, template, transform)

    out = {
        "template": template.form_id,
        "residual_px": residual,
        "transform": {
            "theta": transform.theta,
            "scale": transform.scale,
            "tx": transform.tx,
            "ty": transform.ty,
        },
        "boxes": [],
    }
    crops_root = Path(crops_dir) if crops_dir else None
    if crops_root:
        crops_root.mkdir(parents=True, exist_ok=True)
    for i, tb in enumerate(typed):
        entry = {
            "box": {"x": tb.box.x, "y": tb.box.y, "w": tb.box.w, "h": tb.box.h},
            "field_id": tb.field_id,
            "type": tb.ctype.wire_name if tb.ctype is not None else "Unknown",
            "overlap": tb.overlap_fraction,
        }
        if crops_root:
            x0 = max(0, int(tb.box.x))
            y0 = max(0, int(tb.box.y))
            x1 = min(scan.width, int(tb.box.x + tb.box.w))
            y1 = min(scan.height, int(tb.box.y + tb.box.h))
            crop_path = crops_root / f"box_{i:03d}.png"
            if x1 > x0 and y1 > y0:
                GrayImage(scan.pixels[y0:y1, x0:x1].copy()).save_png(crop_path)
                entry["crop"] = str(crop_path)
        out["boxes"].append(entry)
    Path(out_path).write_text(json.dumps(out, indent=2) + "\n", "utf-8")
    click.echo(f"aligned with residual {residual:.3f} px; wrote {out_path}")


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def _histogram_svg(histogram: dict[str, int], top_n: int = 30) -> str:
    """Minimal self-contained SVG bar chart of symbol counts."""
    items = sorted(histogram.items(), key=lambda kv: -kv[1])[:top_n]
    if not items:
        return '<svg xmlns="http://www.w3.org/2000/svg" width="200" height="40"><text x="10" y="25">empty histogram</text></svg>'
    bar_w, gap, chart_h = 22, 6, 220
    width = len(items) * (bar_w + gap) + gap + 40
    peak = max(count for _, count in items)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{chart_h + 50}">',
        '<style>text{font:11px monospace}</style>',
    ]
    for i, (symbol, count) in enumerate(items):
        h = max(1, round(chart_h * count / peak))
        x = 30 + gap + i * (bar_w + gap)
        y = 10 + chart_h - h
        label = symbol if symbol != " " else "␣"
        parts.append(f'<rect x="{x}" y="{y}" width="{bar_w}" height="{h}" fill="#4878a8"/>')
        parts.append(f'<text x="{x + bar_w // 2}" y="{chart_h + 26}" text-anchor="middle">{label}</text>')
        parts.append(f'<text x="{x + bar_w // 2}" y="{y - 3}" text-anchor="middle">{count}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


@main.command("diagnose")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--forced-type", type=click.Choice([t.wire_name for t in ContentType]), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--plot", "plot_path", type=click.Path(), default=None,
              help="Optional SVG bar chart of the predicted-symbol histogram.")
@click.option("--min-width", type=int, default=256, show_default=True)
@handle_errors
def cmd_diagnose(checkpoint_path, manifest_path, forced_type, out_path, plot_path, min_width):
    """Decode a manifest with the type input forced to one value."""
    params, arch, alphabet = load_checkpoint(checkpoint_path)
    records = read_manifest(manifest_path)
    forced = ContentType.from_wire(forced_type)
    histogram = forced_type_histogram(
        params, arch, records, Path(manifest_path).parent, forced, alphabet,
        min_width=min_width,
    )
    doc = {
        "forced_type": forced.wire_name,
        "samples": len(records),
        "digit_fraction": digit_fraction(histogram),
        "histogram": histogram,
    }
    Path(out_path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", "utf-8")
    if plot_path:
        Path(plot_path).write_text(_histogram_svg(histogram), "utf-8")
    click.echo(
        f"forced {forced.wire_name}: {sum(histogram.values())} symbols predicted, "
        f"digit fraction {doc['digit_fraction']:.3f}"
    )
    click.echo(f"histogram written to {out_path}")


if __name__ == "__main__":
    main()
