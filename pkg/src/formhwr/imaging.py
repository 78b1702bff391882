"""Raster type, glyph rendering, and the augmentation families.

Convention throughout: single-channel 8-bit images, origin top-left,
0 = ink and 255 = background. All randomized operations take an explicit
seed or stream and are pure functions of their inputs.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import BoundsError, ConfigurationError, InvalidTransformError
from .fonts import FALLBACK_FONT_ID, FontSet
from .rng import SeedStream, Xoshiro256StarStar, as_rng

BACKGROUND = 255


class Rect(NamedTuple):
    x: float
    y: float
    w: float
    h: float


@dataclass(eq=False)
class GrayImage:
    """Row-major 8-bit grayscale raster."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError(f"degenerate image shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def blank(cls, width: int, height: int, value: int = BACKGROUND) -> "GrayImage":
        return cls(np.full((height, width), value, dtype=np.uint8))

    @classmethod
    def from_float(cls, arr: np.ndarray) -> "GrayImage":
        return cls(np.rint(np.clip(arr, 0, 255)).astype(np.uint8))

    def copy(self) -> "GrayImage":
        return GrayImage(self.pixels.copy())

    def same_pixels(self, other: "GrayImage") -> bool:
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    # -- I/O ---------------------------------------------------------------

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    @classmethod
    def load_png(cls, path: str | Path) -> "GrayImage":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("L"), dtype=np.uint8).copy())

    def save_pgm(self, path: str | Path) -> None:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        Path(path).write_bytes(header + self.pixels.tobytes())

    @classmethod
    def load_pgm(cls, path: str | Path) -> "GrayImage":
        data = Path(path).read_bytes()
        fields = []
        pos = 0
        while len(fields) < 4:
            if data[pos : pos + 1] == b"#":
                pos = data.index(b"\n", pos) + 1
                continue
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            if end > pos:
                fields.append(data[pos:end])
            pos = end + 1
        if fields[0] != b"P5":
            raise ValueError("not a binary PGM (P5) file")
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
        if maxval != 255:
            raise ValueError(f"only maxval 255 supported, got {maxval}")
        raster = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
        return cls(raster.reshape(h, w).copy())


# ---------------------------------------------------------------------------
# Sampling primitives
# ---------------------------------------------------------------------------


def _bilinear_fill(pixels: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill: float) -> np.ndarray:
    """Sample float image at (sx, sy); out-of-range contributions read `fill`."""
    h, w = pixels.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    wx = sx - x0
    wy = sy - y0

    def corner(xi, yi):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = pixels[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(valid, vals, fill)

    v00 = corner(x0, y0)
    v01 = corner(x0 + 1, y0)
    v10 = corner(x0, y0 + 1)
    v11 = corner(x0 + 1, y0 + 1)
    top = v00 * (1.0 - wx) + v01 * wx
    bot = v10 * (1.0 - wx) + v11 * wx
    return top * (1.0 - wy) + bot * wy


def resize_bilinear(img: GrayImage, new_w: int, new_h: int) -> GrayImage:
    """Aspect-free bilinear resize with half-pixel centers and edge clamping."""
    if new_w < 1 or new_h < 1:
        raise ValueError(f"invalid target size {new_w}x{new_h}")
    src = img.pixels.astype(np.float64)
    h, w = src.shape
    xs = (np.arange(new_w) + 0.5) * w / new_w - 0.5
    ys = (np.arange(new_h) + 0.5) * h / new_h - 0.5
    sx = np.clip(xs, 0, w - 1)[None, :].repeat(new_h, axis=0)
    sy = np.clip(ys, 0, h - 1)[:, None].repeat(new_w, axis=1)
    return GrayImage.from_float(_bilinear_fill(src, sx, sy, BACKGROUND))


# ---------------------------------------------------------------------------
# Affine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineTransform2D:
    """Row-major [a b tx; c d ty]: maps (x, y) -> (a x + b y + tx, c x + d y + ty)."""

    a: float
    b: float
    tx: float
    c: float
    d: float
    ty: float

    def __post_init__(self):
        if abs(self.det) < 1e-12:
            raise InvalidTransformError(f"transform is degenerate (det={self.det!r})")

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform2D":
        return cls(1.0, 0.0, tx, 0.0, 1.0, ty)

    @classmethod
    def similarity(cls, theta: float, scale: float, tx: float, ty: float) -> "AffineTransform2D":
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        return cls(scale * cos_t, -scale * sin_t, tx, scale * sin_t, scale * cos_t, ty)

    @classmethod
    def rotation_about(cls, rotation_deg: float, pivot: tuple[float, float]) -> "AffineTransform2D":
        theta = math.radians(rotation_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        px, py = pivot
        return cls(
            cos_t,
            -sin_t,
            px - (cos_t * px - sin_t * py),
            sin_t,
            cos_t,
            py - (sin_t * px + cos_t * py),
        )

    @classmethod
    def about_center(
        cls,
        width: int,
        height: int,
        rotation_deg: float = 0.0,
        shear_x: float = 0.0,
        scale: float = 1.0,
    ) -> "AffineTransform2D":
        """Scale, x-shear, then rotate, all about the image center."""
        theta = math.radians(rotation_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        # linear part: R(theta) @ Shear(shear_x) @ (scale * I)
        m00 = cos_t * scale
        m01 = (cos_t * shear_x - sin_t) * scale
        m10 = sin_t * scale
        m11 = (sin_t * shear_x + cos_t) * scale
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        tx = cx - (m00 * cx + m01 * cy)
        ty = cy - (m10 * cx + m11 * cy)
        return cls(m00, m01, tx, m10, m11, ty)

    def inverse(self) -> "AffineTransform2D":
        det = self.det
        ia, ib = self.d / det, -self.b / det
        ic, id_ = -self.c / det, self.a / det
        return AffineTransform2D(
            ia, ib, -(ia * self.tx + ib * self.ty), ic, id_, -(ic * self.tx + id_ * self.ty)
        )

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(pts)
        out[:, 0] = self.a * pts[:, 0] + self.b * pts[:, 1] + self.tx
        out[:, 1] = self.c * pts[:, 0] + self.d * pts[:, 1] + self.ty
        return out


def affine_extent(width: int, height: int, t: AffineTransform2D) -> tuple[int, int, int, int]:
    """Output canvas (x0, y0, w, h) for a warp of a width x height image.

    The canvas covers the union of the source extent and the transformed
    extent, so content is never clipped; x0/y0 are the absolute coordinates
    of the output's top-left pixel (integers, possibly negative).
    """
    corners = np.array(
        [[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]],
        dtype=np.float64,
    )
    mapped = t.apply_points(corners)
    min_x = min(0.0, float(mapped[:, 0].min()))
    min_y = min(0.0, float(mapped[:, 1].min()))
    max_x = max(float(width - 1), float(mapped[:, 0].max()))
    max_y = max(float(height - 1), float(mapped[:, 1].max()))
    x0 = math.floor(min_x)
    y0 = math.floor(min_y)
    return x0, y0, math.ceil(max_x) - x0 + 1, math.ceil(max_y) - y0 + 1


def apply_affine(img: GrayImage, t: AffineTransform2D) -> GrayImage:
    """Inverse-mapped bilinear warp.

    The output canvas covers the union of the source extent and the
    transformed extent (anchored so the source origin keeps its coordinates
    when it stays inside). Translating by +3 px therefore yields the input
    shifted right with a 3 px background strip; the identity is exact.
    """
    h, w = img.pixels.shape
    out_x0, out_y0, out_w, out_h = affine_extent(w, h, t)

    inv = t.inverse()
    xs = np.arange(out_w, dtype=np.float64) + out_x0
    ys = np.arange(out_h, dtype=np.float64) + out_y0
    gx, gy = np.meshgrid(xs, ys)
    sx = inv.a * gx + inv.b * gy + inv.tx
    sy = inv.c * gx + inv.d * gy + inv.ty
    out = _bilinear_fill(img.pixels.astype(np.float64), sx, sy, BACKGROUND)
    return GrayImage.from_float(out)


# ---------------------------------------------------------------------------
# Elastic distortion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElasticParams:
    """Gaussian-smoothed random displacement field parameters.

    sigma is clamped into [3, 15] at construction; alpha is the maximum
    displacement magnitude in pixels after field normalization.
    """

    sigma: float
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        object.__setattr__(self, "sigma", float(min(15.0, max(3.0, self.sigma))))


def apply_elastic(
    img: GrayImage, p: ElasticParams, seed: SeedStream | Xoshiro256StarStar
) -> GrayImage:
    """Per-pixel displacement warp.

    dx then dy are drawn i.i.d. U(-1, 1) in row-major order, each smoothed by
    a Gaussian of std sigma (kernel radius ceil(3 sigma), reflected borders),
    jointly normalized to unit maximum magnitude, and scaled by alpha.
    """
    rng = as_rng(seed)
    h, w = img.pixels.shape
    dx = 2.0 * rng.random_array(h * w).reshape(h, w) - 1.0
    dy = 2.0 * rng.random_array(h * w).reshape(h, w) - 1.0
    radius = math.ceil(3.0 * p.sigma)
    dx = gaussian_filter(dx, p.sigma, mode="reflect", radius=radius)
    dy = gaussian_filter(dy, p.sigma, mode="reflect", radius=radius)
    magnitude = np.hypot(dx, dy)
    peak = magnitude.max()
    if peak > 0:
        dx = dx / peak * p.alpha
        dy = dy / peak * p.alpha
    else:
        dx = np.zeros_like(dx)
        dy = np.zeros_like(dy)
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    out = _bilinear_fill(img.pixels.astype(np.float64), gx + dx, gy + dy, BACKGROUND)
    return GrayImage.from_float(out)


# ---------------------------------------------------------------------------
# Morphology
# ---------------------------------------------------------------------------


class MorphKind(enum.Enum):
    ERODE = "erode"
    DILATE = "dilate"
    GRADIENT = "gradient"
    CLOSE = "close"


class StructShape(enum.Enum):
    RECT = "rect"
    ELLIPSE = "ellipse"
    CROSS = "cross"


@dataclass(frozen=True)
class MorphOp:
    kind: MorphKind
    shape: StructShape = StructShape.RECT
    radius: int = 1

    def __post_init__(self):
        if not (1 <= self.radius <= 3):
            raise ValueError(f"radius must be in 1..3, got {self.radius}")

    def footprint(self) -> np.ndarray:
        r = self.radius
        side = 2 * r + 1
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        if self.shape is StructShape.RECT:
            mask = np.ones((side, side), dtype=bool)
        elif self.shape is StructShape.ELLIPSE:
            mask = (xx * xx + yy * yy) <= r * r
        else:
            mask = (xx == 0) | (yy == 0)
        return mask


def _rank_filter(pixels: np.ndarray, footprint: np.ndarray, take_min: bool) -> np.ndarray:
    r = footprint.shape[0] // 2
    padded = np.pad(pixels, r, mode="reflect")
    h, w = pixels.shape
    out = None
    offsets = np.argwhere(footprint) - r
    for dy, dx in offsets:
        view = padded[r + dy : r + dy + h, r + dx : r + dx + w]
        if out is None:
            out = view.copy()
        elif take_min:
            np.minimum(out, view, out=out)
        else:
            np.maximum(out, view, out=out)
    return out


def apply_morph(img: GrayImage, op: MorphOp) -> GrayImage:
    """Grayscale morphology in the ink-is-dark convention.

    Erode is a min filter (thickens ink), Dilate a max filter (thins it).
    Close applies Erode then Dilate, which fills small ink gaps and never
    brightens a pixel. Gradient is 255 - (max - min), drawing edges as ink.
    """
    fp = op.footprint()
    px = img.pixels
    if op.kind is MorphKind.ERODE:
        return GrayImage(_rank_filter(px, fp, take_min=True))
    if op.kind is MorphKind.DILATE:
        return GrayImage(_rank_filter(px, fp, take_min=False))
    if op.kind is MorphKind.CLOSE:
        eroded = _rank_filter(px, fp, take_min=True)
        return GrayImage(_rank_filter(eroded, fp, take_min=False))
    lo = _rank_filter(px, fp, take_min=True).astype(np.int16)
    hi = _rank_filter(px, fp, take_min=False).astype(np.int16)
    return GrayImage((255 - (hi - lo)).astype(np.uint8))


# ---------------------------------------------------------------------------
# Text rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RenderStyle:
    font_id: str = FALLBACK_FONT_ID
    text_height: int = 32
    kerning_jitter_std: float = 1.0
    vertical_jitter_std: float = 2.0

    def __post_init__(self):
        if self.text_height < 8:
            raise ValueError(f"text_height must be >= 8, got {self.text_height}")
        if self.kerning_jitter_std < 0 or self.vertical_jitter_std < 0:
            raise ValueError("jitter stds must be >= 0")


_INK_MARGIN = 2  # background border around the tight ink box, in pixels


def render_text(
    text: str,
    style: RenderStyle,
    seed: SeedStream | Xoshiro256StarStar,
    fonts: FontSet | None = None,
    warnings: list[str] | None = None,
) -> GrayImage:
    """Rasterize text with per-glyph kerning and baseline jitter.

    For glyph i, the vertical offset is drawn first (N(0, vertical std)),
    then the advance perturbation for the following glyph (N(0, kerning
    std)). Glyphs missing from the font fall back to the built-in bitmap
    face and are reported through `warnings`.
    """
    if not text:
        raise ValueError("cannot render empty text")
    rng = as_rng(seed)
    fonts = fonts or FontSet()
    font = fonts.resolve(style.font_id)

    placements = []  # (x, y, ink array)
    pen_x = 0.0
    for ch in text:
        source = font
        if not font.has_glyph(ch):
            if not fonts.fallback.has_glyph(ch):
                raise ConfigurationError(
                    f"glyph {ch!r} missing from font {style.font_id!r} and from the fallback face"
                )
            source = fonts.fallback
            if warnings is not None:
                warnings.append(f"fallback_glyph:{ch}")
        ink, advance = source.glyph(ch, style.text_height)
        dy = rng.gauss(0.0, style.vertical_jitter_std)
        placements.append((int(round(pen_x)), int(round(dy)), ink))
        pen_x += advance + rng.gauss(0.0, style.kerning_jitter_std)

    min_y = min(p[1] for p in placements)
    max_y = max(p[1] + p[2].shape[0] for p in placements)
    min_x = min(p[0] for p in placements)
    max_x = max(p[0] + p[2].shape[1] for p in placements)
    canvas = np.zeros((max_y - min_y, max_x - min_x), dtype=np.float64)
    for x, y, ink in placements:
        gh, gw = ink.shape
        ys, xs = y - min_y, x - min_x
        region = canvas[ys : ys + gh, xs : xs + gw]
        np.maximum(region, ink, out=region)

    intensity = 255.0 - 255.0 * canvas
    inked = intensity < 255.0 - 1e-9
    if not inked.any():
        return GrayImage.blank(2 * _INK_MARGIN, style.text_height + 2 * _INK_MARGIN)
    rows = np.flatnonzero(inked.any(axis=1))
    cols = np.flatnonzero(inked.any(axis=0))
    tight = intensity[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    out = np.full(
        (tight.shape[0] + 2 * _INK_MARGIN, tight.shape[1] + 2 * _INK_MARGIN),
        float(BACKGROUND),
    )
    out[_INK_MARGIN:-_INK_MARGIN, _INK_MARGIN:-_INK_MARGIN] = tight
    return GrayImage.from_float(out)


# ---------------------------------------------------------------------------
# Template compositing
# ---------------------------------------------------------------------------


def composite_into_field(
    img: GrayImage,
    form: GrayImage,
    field_box: Rect,
    seed: SeedStream | Xoshiro256StarStar,
    overflow: float | None = None,
    margin: float | None = None,
) -> GrayImage:
    """Paste rendered text into a form field and crop its surroundings.

    The text is scaled so its height is `overflow` (drawn U(1.0, 1.15) when
    not supplied) times the field height, anchored at the field's left edge
    and vertically centered, blended by per-pixel minimum. The returned crop
    expands the field box by `margin` (drawn U(0.05, 0.20)) of its dimensions
    on each side, clamped to the form. Draw order: overflow, then margin.
    """
    rng = as_rng(seed)
    fx, fy, fw, fh = (int(round(v)) for v in field_box)
    if fx < 0 or fy < 0 or fx + fw > form.width or fy + fh > form.height or fw <= 0 or fh <= 0:
        raise BoundsError(f"field box {field_box} outside form {form.width}x{form.height}")
    if overflow is None:
        overflow = rng.uniform(1.0, 1.15)
    if margin is None:
        margin = rng.uniform(0.05, 0.20)

    target_h = max(1, round(fh * overflow))
    target_w = max(1, round(img.width * target_h / img.height))
    scaled = resize_bilinear(img, target_w, target_h)

    canvas = form.pixels.copy()
    paste_x = fx
    paste_y = fy + (fh - target_h) // 2
    x0, y0 = max(0, paste_x), max(0, paste_y)
    x1 = min(form.width, paste_x + target_w)
    y1 = min(form.height, paste_y + target_h)
    if x1 > x0 and y1 > y0:
        sub = scaled.pixels[y0 - paste_y : y1 - paste_y, x0 - paste_x : x1 - paste_x]
        np.minimum(canvas[y0:y1, x0:x1], sub, out=canvas[y0:y1, x0:x1])

    mx = int(round(fw * margin))
    my = int(round(fh * margin))
    cx0 = max(0, fx - mx)
    cy0 = max(0, fy - my)
    cx1 = min(form.width, fx + fw + mx)
    cy1 = min(form.height, fy + fh + my)
    return GrayImage(canvas[cy0:cy1, cx0:cx1].copy())
