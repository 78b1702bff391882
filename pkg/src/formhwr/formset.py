"""Form templates, dataset emission, and recognizer input preprocessing."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, LabelEncodingError
from .fonts import load_fonts
from .imaging import (
    AffineTransform2D,
    ElasticParams,
    GrayImage,
    MorphKind,
    MorphOp,
    Rect,
    RenderStyle,
    StructShape,
    apply_affine,
    apply_elastic,
    apply_morph,
    composite_into_field,
    render_text,
    resize_bilinear,
)
from .rng import SeedStream, mix_seed
from .typedgen import Alphabet, ContentType, LexiconSet, TypeWeights, generate, sample_type

MANIFEST_NAME = "manifest.jsonl"


class Square(NamedTuple):
    cx: float
    cy: float
    side: float


@dataclass(frozen=True)
class FieldSpec:
    id: str
    ctype: ContentType
    box: Rect

    def __post_init__(self):
        if self.box.w <= 0 or self.box.h <= 0:
            raise ConfigurationError(f"field {self.id!r} has a degenerate box {self.box}")


@dataclass(frozen=True)
class FormTemplate:
    """Blank-form model: page size, marker squares, typed field boxes."""

    form_id: str
    page: tuple[int, int]  # (width, height) in pixels
    squares: tuple[Square, ...]
    fields: tuple[FieldSpec, ...]
    background: str | None = None

    def __post_init__(self):
        if len(self.squares) < 3:
            raise ConfigurationError(
                f"template {self.form_id!r} needs >= 3 marker squares, has {len(self.squares)}"
            )
        ids = [f.id for f in self.fields]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"template {self.form_id!r} has duplicate field ids")
        pw, ph = self.page
        for f in self.fields:
            if f.box.x < 0 or f.box.y < 0 or f.box.x + f.box.w > pw or f.box.y + f.box.h > ph:
                raise ConfigurationError(f"field {f.id!r} box {f.box} outside page {self.page}")

    def square_centers(self) -> np.ndarray:
        return np.array([[s.cx, s.cy] for s in self.squares], dtype=np.float64)

    def fields_of_type(self, ctype: ContentType) -> list[FieldSpec]:
        return [f for f in self.fields if f.ctype is ctype]

    def to_json_dict(self) -> dict:
        return {
            "form_id": self.form_id,
            "page": {"width": self.page[0], "height": self.page[1]},
            "background": self.background,
            "squares": [{"cx": s.cx, "cy": s.cy, "side": s.side} for s in self.squares],
            "fields": [
                {
                    "id": f.id,
                    "ctype": f.ctype.wire_name,
                    "box": {"x": f.box.x, "y": f.box.y, "w": f.box.w, "h": f.box.h},
                }
                for f in self.fields
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "FormTemplate":
        try:
            page = (int(data["page"]["width"]), int(data["page"]["height"]))
            squares = tuple(
                Square(float(s["cx"]), float(s["cy"]), float(s["side"]))
                for s in data["squares"]
            )
            fields = tuple(
                FieldSpec(
                    id=str(f["id"]),
                    ctype=ContentType.from_wire(f["ctype"]),
                    box=Rect(f["box"]["x"], f["box"]["y"], f["box"]["w"], f["box"]["h"]),
                )
                for f in data["fields"]
            )
            return cls(
                form_id=str(data["form_id"]),
                page=page,
                squares=squares,
                fields=fields,
                background=data.get("background"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed template document: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FormTemplate":
        try:
            data = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"template {path} is not valid JSON: {exc}") from exc
        return cls.from_json_dict(data)


def render_template_page(template: FormTemplate, base_dir: str | Path | None = None) -> GrayImage:
    """Rasterize the blank form: background image or white page with the
    marker squares (hollow, 2 px stroke) and 1 px field outlines drawn in."""
    if template.background:
        path = Path(template.background)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return GrayImage.load_png(path)
    w, h = template.page
    page = GrayImage.blank(w, h)
    px = page.pixels
    for s in template.squares:
        half = s.side / 2.0
        x0, y0 = int(round(s.cx - half)), int(round(s.cy - half))
        x1, y1 = int(round(s.cx + half)), int(round(s.cy + half))
        x0c, y0c = max(0, x0), max(0, y0)
        x1c, y1c = min(w, x1), min(h, y1)
        px[y0c:y1c, x0c:x1c] = 0
        ix0, iy0 = x0 + 2, y0 + 2
        ix1, iy1 = x1 - 2, y1 - 2
        if ix1 > ix0 and iy1 > iy0:
            px[max(0, iy0) : min(h, iy1), max(0, ix0) : min(w, ix1)] = 255
    for f in template.fields:
        x0, y0 = int(f.box.x), int(f.box.y)
        x1, y1 = x0 + int(f.box.w), y0 + int(f.box.h)
        px[y0, x0:x1] = 0
        px[y1 - 1, x0:x1] = 0
        px[y0:y1, x0] = 0
        px[y0:y1, x1 - 1] = 0
    return page


# ---------------------------------------------------------------------------
# Sample records / manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    """One dataset row: where the image is and how it was produced."""

    image_path: str
    text: str
    ctype: ContentType
    original_width: int
    font_id: str
    seed: int
    augmentations: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text:
            raise ValueError("SampleRecord.text must be non-empty")
        if self.original_width < 1:
            raise ValueError(f"original_width must be >= 1, got {self.original_width}")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "image_path": self.image_path,
                "text": self.text,
                "ctype": self.ctype.wire_name,
                "original_width": self.original_width,
                "font_id": self.font_id,
                "seed": self.seed,
                "augmentations": list(self.augmentations),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json_line(cls, line: str) -> "SampleRecord":
        data = json.loads(line)
        return cls(
            image_path=data["image_path"],
            text=data["text"],
            ctype=ContentType.from_wire(data["ctype"]),
            original_width=int(data["original_width"]),
            font_id=data["font_id"],
            seed=int(data["seed"]),
            augmentations=tuple(data.get("augmentations", [])),
        )


def write_manifest(records: list[SampleRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")


def read_manifest(path: str | Path) -> list[SampleRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SampleRecord.from_json_line(line))
    return records


# ---------------------------------------------------------------------------
# Dataset emission
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenConfig:
    """Everything emit_dataset needs besides template/weights/seed.

    Augmentation probabilities default to: affine 0.9, elastic 0.8,
    morphology 0.5, compositing 0.7, drawn independently per sample.
    """

    lexicons_dir: str | None = None
    fonts_dir: str | None = None
    alphabet_file: str | None = None
    text_height: int = 32
    kerning_jitter_std: float = 1.0
    vertical_jitter_std: float = 2.0
    p_affine: float = 0.9
    p_elastic: float = 0.8
    p_morph: float = 0.5
    p_composite: float = 0.7
    rotation_range_deg: float = 5.0
    shear_range: float = 0.3
    scale_range: tuple[float, float] = (0.8, 1.2)
    elastic_sigma_mean: float = 8.0
    elastic_sigma_std: float = 2.0


@lru_cache(maxsize=4)
def _cached_lexicons(lexicons_dir: str | None) -> LexiconSet:
    return LexiconSet.from_dir(lexicons_dir) if lexicons_dir else LexiconSet.bundled()


@lru_cache(maxsize=4)
def _cached_alphabet(alphabet_file: str | None) -> Alphabet:
    return Alphabet.from_file(alphabet_file) if alphabet_file else Alphabet.default()


_MORPH_KINDS = (MorphKind.ERODE, MorphKind.DILATE, MorphKind.GRADIENT, MorphKind.CLOSE)
_STRUCT_SHAPES = (StructShape.RECT, StructShape.ELLIPSE, StructShape.CROSS)


def _make_sample(
    index: int,
    root_seed: int,
    template: FormTemplate,
    page_pixels: np.ndarray,
    weights: TypeWeights,
    config: GenConfig,
) -> tuple[str, bytes, str]:
    """Build one sample. Returns (manifest line, png bytes, relative path)."""
    lexicons = _cached_lexicons(config.lexicons_dir)
    alphabet = _cached_alphabet(config.alphabet_file)
    fonts = load_fonts(config.fonts_dir)
    page = GrayImage(page_pixels)

    rng = SeedStream(root_seed, index).rng()
    ctype = sample_type(weights, rng)
    ts = generate(ctype, rng, lexicons, alphabet)
    font_id = fonts.ids[rng.randbelow(len(fonts.ids))]
    style = RenderStyle(
        font_id=font_id,
        text_height=config.text_height,
        kerning_jitter_std=config.kerning_jitter_std,
        vertical_jitter_std=config.vertical_jitter_std,
    )
    augs: list[str] = []
    img = render_text(ts.text, style, rng, fonts, warnings=augs)

    if rng.random() < config.p_affine:
        rot = rng.uniform(-config.rotation_range_deg, config.rotation_range_deg)
        shear = rng.uniform(-config.shear_range, config.shear_range)
        scale = rng.uniform(*config.scale_range)
        t = AffineTransform2D.about_center(img.width, img.height, rot, shear, scale)
        img = apply_affine(img, t)
        augs.append(f"affine:rot={rot:.3f},shear={shear:.3f},scale={scale:.3f}")
    if rng.random() < config.p_elastic:
        sigma = rng.gauss(config.elastic_sigma_mean, config.elastic_sigma_std)
        params = ElasticParams(sigma=sigma, alpha=float(config.text_height))
        img = apply_elastic(img, params, rng)
        augs.append(f"elastic:sigma={params.sigma:.3f},alpha={params.alpha:.1f}")
    if rng.random() < config.p_morph:
        op = MorphOp(
            kind=_MORPH_KINDS[rng.randbelow(4)],
            shape=_STRUCT_SHAPES[rng.randbelow(3)],
            radius=rng.randint(1, 3),
        )
        img = apply_morph(img, op)
        augs.append(f"morph:{op.kind.value},{op.shape.value},r={op.radius}")
    if rng.random() < config.p_composite:
        candidates = template.fields_of_type(ctype)
        if not candidates:
            augs.append("no_matching_field")
        else:
            fld = candidates[rng.randbelow(len(candidates))]
            img = composite_into_field(img, page, fld.box, rng)
            augs.append(f"composite:{fld.id}")

    rel_path = f"images/{index:08d}.png"
    record = SampleRecord(
        image_path=rel_path,
        text=ts.text,
        ctype=ctype,
        original_width=img.width,
        font_id=font_id,
        seed=mix_seed(root_seed, index),
        augmentations=tuple(augs),
    )
    return record.to_json_line(), img.to_png_bytes(), rel_path


def _emit_range(args) -> list[tuple[int, str, bytes, str]]:
    lo, hi, root_seed, template_json, page_pixels, weights_json, config = args
    template = FormTemplate.from_json_dict(template_json)
    weights = TypeWeights.from_json_dict(weights_json)
    out = []
    for i in range(lo, hi):
        line, png, rel_path = _make_sample(i, root_seed, template, page_pixels, weights, config)
        out.append((i, line, png, rel_path))
    return out


def emit_dataset(
    count: int,
    template: FormTemplate,
    weights: TypeWeights,
    config: GenConfig,
    root_seed: int,
    out_dir: str | Path,
    workers: int = 1,
    template_dir: str | Path | None = None,
) -> Path:
    """Write `count` samples plus a JSON Lines manifest under out_dir.

    Output is byte-identical for a fixed (root_seed, config) regardless of
    the worker count: sample i depends only on its own derived sub-stream,
    and the manifest is written in index order by this process.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    page = render_template_page(template, base_dir=template_dir)

    results: list[tuple[int, str, bytes, str]] = []
    if workers <= 1 or count < 2:
        for i in range(count):
            line, png, rel_path = _make_sample(i, root_seed, template, page.pixels, weights, config)
            results.append((i, line, png, rel_path))
    else:
        chunk = -(-count // workers)
        jobs = [
            (lo, min(lo + chunk, count), root_seed, template.to_json_dict(), page.pixels,
             weights.to_json_dict(), config)
            for lo in range(0, count, chunk)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_emit_range, jobs):
                results.extend(part)

    results.sort(key=lambda r: r[0])
    for _, _, png, rel_path in results:
        (out_dir / rel_path).write_bytes(png)
    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        for _, line, _, _ in results:
            fh.write(line + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# Recognizer input preprocessing
# ---------------------------------------------------------------------------

INPUT_HEIGHT = 32
DEFAULT_MIN_WIDTH = 256


def preprocess(img: GrayImage, min_width: int = DEFAULT_MIN_WIDTH) -> tuple[GrayImage, int]:
    """Scale to height 32, then self-tile narrow images up to min_width.

    Returns the processed image and the post-scaling, pre-padding width,
    which downstream masking treats as the number of meaningful columns.
    """
    h, w = img.pixels.shape
    new_w = max(1, round(w * INPUT_HEIGHT / h))
    scaled = resize_bilinear(img, new_w, INPUT_HEIGHT)
    if new_w >= min_width:
        return scaled, new_w
    reps = -(-min_width // new_w)
    tiled = np.tile(scaled.pixels, (1, reps))[:, :min_width]
    return GrayImage(tiled.copy()), new_w


def tile_to_width(img: GrayImage, width: int) -> GrayImage:
    """Extend an image to `width` columns by continuing the self-copy tiling."""
    if img.width >= width:
        return img
    reps = -(-width // img.width)
    return GrayImage(np.tile(img.pixels, (1, reps))[:, :width].copy())


@dataclass
class Batch:
    """Equal-width bundle of preprocessed samples ready for the recognizer."""

    images: list[GrayImage]
    widths: list[int]
    labels: list[list[int]]
    types: list[ContentType]

    def __post_init__(self):
        n = len(self.images)
        if not (len(self.widths) == len(self.labels) == len(self.types) == n):
            raise ValueError("Batch fields must have equal lengths")
        if n:
            bw = self.images[0].width
            for img in self.images:
                if img.height != INPUT_HEIGHT or img.width != bw:
                    raise ValueError("Batch images must share height 32 and a common width")
            for w in self.widths:
                if w > bw:
                    raise ValueError(f"original width {w} exceeds batch width {bw}")

    def __len__(self) -> int:
        return len(self.images)


def make_batches(
    records: list[SampleRecord],
    batch_size: int,
    alphabet: Alphabet,
    base_dir: str | Path,
    min_width: int = DEFAULT_MIN_WIDTH,
    width_multiple: int = 4,
) -> list[Batch]:
    """Bucket records by padded width and cut buckets into batches.

    Bucket widths are rounded up to `width_multiple` (images are extended by
    tiling) so any pooling stack with that horizontal factor divides evenly.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    base_dir = Path(base_dir)
    buckets: dict[int, list[tuple[GrayImage, int, list[int], ContentType]]] = {}
    for rec in records:
        img = GrayImage.load_png(base_dir / rec.image_path)
        processed, original_width = preprocess(img, min_width)
        target = -(-processed.width // width_multiple) * width_multiple
        processed = tile_to_width(processed, target)
        try:
            label = alphabet.encode(rec.text)
        except KeyError as exc:
            raise LabelEncodingError(f"sample {rec.image_path}: {exc.args[0]}") from None
        buckets.setdefault(processed.width, []).append(
            (processed, original_width, label, rec.ctype)
        )

    batches = []
    for width in sorted(buckets):
        items = buckets[width]
        for lo in range(0, len(items), batch_size):
            chunk = items[lo : lo + batch_size]
            batches.append(
                Batch(
                    images=[c[0] for c in chunk],
                    widths=[c[1] for c in chunk],
                    labels=[c[2] for c in chunk],
                    types=[c[3] for c in chunk],
                )
            )
    return batches
