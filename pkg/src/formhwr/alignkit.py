"""Scan-to-template registration and field-type assignment.

Pipeline: detect hollow marker squares in both rasters, align their center
points with ICP (nearest-neighbor correspondences plus a closed-form
similarity fit), then assign each externally supplied text box the type of
the template field it overlaps the most.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConfigurationError, NonConformingDocumentError
from .formset import FormTemplate
from .imaging import GrayImage, Rect
from .typedgen import ContentType


@dataclass(frozen=True)
class SquareDetection:
    center: tuple[float, float]
    side: float
    hollowness: float  # interior ink fraction; low means hollow


@dataclass(frozen=True)
class RigidTransform2D:
    """Similarity transform p' = s R(theta) p + t."""

    theta: float
    scale: float
    tx: float
    ty: float

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        cos_t, sin_t = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = self.scale * (cos_t * pts[:, 0] - sin_t * pts[:, 1]) + self.tx
        out[:, 1] = self.scale * (sin_t * pts[:, 0] + cos_t * pts[:, 1]) + self.ty
        return out

    @classmethod
    def identity(cls) -> "RigidTransform2D":
        return cls(0.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class TypedBox:
    box: Rect
    ctype: ContentType | None  # None means Unknown
    overlap_fraction: float
    field_id: str | None = None


# ---------------------------------------------------------------------------
# Square detection
# ---------------------------------------------------------------------------


def otsu_threshold(pixels: np.ndarray) -> int:
    """Threshold maximizing between-class variance; ink is <= the threshold."""
    hist = np.bincount(pixels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist) / total
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = 0.0
    return int(np.argmax(between))


@dataclass(frozen=True)
class SquareFilter:
    size_range: tuple[float, float]
    aspect_range: tuple[float, float] = (0.8, 1.25)
    max_interior_ink: float = 0.2
    min_perimeter_ink: float = 0.6


def detect_squares(
    img: GrayImage, size_range: tuple[float, float], filters: SquareFilter | None = None
) -> list[SquareDetection]:
    """Find hollow square markers: binarize, take 8-connected ink components,
    keep those passing squareness, perimeter-coverage, and hollowness tests.
    Detections are sorted by (cy, cx)."""
    f = filters or SquareFilter(size_range)
    mask = img.pixels <= otsu_threshold(img.pixels)
    if not mask.any():
        return []
    labeled, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    detections = []
    for index, sl in enumerate(ndimage.find_objects(labeled), start=1):
        if sl is None:
            continue
        h = sl[0].stop - sl[0].start
        w = sl[1].stop - sl[1].start
        side = (w + h) / 2.0
        if not (f.size_range[0] <= side <= f.size_range[1]):
            continue
        aspect = w / h
        if not (f.aspect_range[0] <= aspect <= f.aspect_range[1]):
            continue
        comp = labeled[sl] == index
        frame = np.zeros_like(comp)
        frame[0, :] = frame[-1, :] = True
        frame[:, 0] = frame[:, -1] = True
        if comp[frame].mean() < f.min_perimeter_ink:
            continue
        inset = max(2, round(side * 0.2))
        interior = comp[inset:-inset, inset:-inset]
        hollowness = float(interior.mean()) if interior.size else 1.0
        if hollowness >= f.max_interior_ink:
            continue
        # centers in continuous page coordinates (pixel i covers [i, i+1))
        cx = sl[1].start + w / 2.0
        cy = sl[0].start + h / 2.0
        detections.append(SquareDetection((cx, cy), side, hollowness))
    detections.sort(key=lambda d: (d.center[1], d.center[0]))
    return detections


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    improvement_tol: float = 1e-6
    reject_threshold: float = 5.0  # RMS pixels
    trim_fraction: float = 0.0  # drop this share of worst correspondences
    scale_band: tuple[float, float] = (0.5, 2.0)


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> RigidTransform2D:
    """Closed-form least-squares rotation + uniform scale + translation
    mapping src points onto dst points (paired by index)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    dot = float((a * b).sum())
    cross = float((a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]).sum())
    norm = float((a * a).sum())
    if norm <= 0:
        raise ConfigurationError("degenerate point set: all source points coincide")
    theta = math.atan2(cross, dot)
    scale = (math.cos(theta) * dot + math.sin(theta) * cross) / norm
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    tx = mu_d[0] - scale * (cos_t * mu_s[0] - sin_t * mu_s[1])
    ty = mu_d[1] - scale * (sin_t * mu_s[0] + cos_t * mu_s[1])
    return RigidTransform2D(theta, scale, tx, ty)


def icp_align(
    template_pts: np.ndarray,
    scan_pts: np.ndarray,
    config: IcpConfig | None = None,
) -> tuple[RigidTransform2D, float]:
    """Register template points onto scan points.

    Alternates nearest-neighbor correspondence with the closed-form
    similarity fit until the RMS residual improves by less than the
    tolerance or the iteration cap is reached. The RMS residual is
    non-increasing across iterations by construction (each fit minimizes
    the distance to the current correspondences, and re-matching can only
    shrink per-point distances); this is asserted per iteration. A final
    residual above the reject threshold, or a scale outside the sanity
    band, raises NonConformingDocumentError.
    """
    config = config or IcpConfig()
    template_pts = np.asarray(template_pts, dtype=np.float64)
    scan_pts = np.asarray(scan_pts, dtype=np.float64)
    if template_pts.shape[0] < 3 or scan_pts.shape[0] < 3:
        raise ConfigurationError(
            f"ICP needs >= 3 points on each side, got {template_pts.shape[0]} and {scan_pts.shape[0]}"
        )

    tree = cKDTree(scan_pts)
    transform = RigidTransform2D.identity()
    previous_rms = math.inf
    rms = math.inf
    for _ in range(config.max_iterations):
        mapped = transform.apply(template_pts)
        dists, idx = tree.query(mapped)
        keep = np.arange(len(template_pts))
        if config.trim_fraction > 0 and len(template_pts) > 3:
            n_keep = max(3, int(math.ceil(len(template_pts) * (1.0 - config.trim_fraction))))
            keep = np.argsort(dists)[:n_keep]
        transform = fit_similarity(template_pts[keep], scan_pts[idx[keep]])
        mapped = transform.apply(template_pts)
        dists, idx = tree.query(mapped)
        rms = float(np.sqrt((dists[keep] ** 2).mean()))
        if rms > previous_rms + 1e-9:
            raise RuntimeError(
                f"ICP residual increased ({previous_rms} -> {rms}); invariant violated"
            )
        if previous_rms - rms < config.improvement_tol:
            break
        previous_rms = rms

    lo, hi = config.scale_band
    if rms > config.reject_threshold or not (lo <= transform.scale <= hi):
        raise NonConformingDocumentError(
            f"alignment rejected: residual {rms:.3f} px (threshold "
            f"{config.reject_threshold}), scale {transform.scale:.3f}",
            residual=rms,
        )
    return transform, rms


# ---------------------------------------------------------------------------
# Type assignment by maximum overlap
# ---------------------------------------------------------------------------


def _rect_corners(rect: Rect) -> np.ndarray:
    x, y, w, h = rect
    return np.array(
        [[x, y], [x + w, y], [x + w, y + h], [x, y + h]], dtype=np.float64
    )


def _clip_polygon_halfplane(poly: list, axis: int, bound: float, keep_below: bool) -> list:
    """Sutherland-Hodgman clip of a convex polygon against one half-plane."""
    out = []
    n = len(poly)
    for i in range(n):
        current = poly[i]
        nxt = poly[(i + 1) % n]
        cur_in = (current[axis] <= bound) if keep_below else (current[axis] >= bound)
        nxt_in = (nxt[axis] <= bound) if keep_below else (nxt[axis] >= bound)
        if cur_in:
            out.append(current)
        if cur_in != nxt_in:
            t = (bound - current[axis]) / (nxt[axis] - current[axis])
            out.append(
                (
                    current[0] + t * (nxt[0] - current[0]),
                    current[1] + t * (nxt[1] - current[1]),
                )
            )
    return out


def _polygon_area(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    area = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def rect_quad_overlap(rect: Rect, quad: np.ndarray) -> float:
    """Area of intersection between an axis-aligned rect and a convex quad."""
    poly = [tuple(p) for p in quad]
    poly = _clip_polygon_halfplane(poly, 0, rect.x, keep_below=False)
    if poly:
        poly = _clip_polygon_halfplane(poly, 0, rect.x + rect.w, keep_below=True)
    if poly:
        poly = _clip_polygon_halfplane(poly, 1, rect.y, keep_below=False)
    if poly:
        poly = _clip_polygon_halfplane(poly, 1, rect.y + rect.h, keep_below=True)
    return _polygon_area(poly)


UNKNOWN_OVERLAP_THRESHOLD = 0.10


def assign_types(
    boxes: list[Rect], template: FormTemplate, transform: RigidTransform2D
) -> list[TypedBox]:
    """Assign each box the type of the template field maximizing
    intersection-area / box-area; below 0.10 the box stays Unknown.
    Ties break toward the smaller field."""
    mapped_fields = []
    for fld in template.fields:
        quad = transform.apply(_rect_corners(fld.box))
        mapped_fields.append((fld, quad, _polygon_area([tuple(p) for p in quad])))

    out = []
    for box in boxes:
        box = Rect(*box)
        box_area = box.w * box.h
        best: tuple[float, float, object] | None = None
        for fld, quad, field_area in mapped_fields:
            overlap = rect_quad_overlap(box, quad) / box_area if box_area > 0 else 0.0
            if overlap <= 0:
                continue
            if best is None or overlap > best[0] + 1e-12 or (
                abs(overlap - best[0]) <= 1e-12 and field_area < best[1]
            ):
                best = (overlap, field_area, fld)
        if best is None or best[0] < UNKNOWN_OVERLAP_THRESHOLD:
            overlap = best[0] if best else 0.0
            out.append(TypedBox(box, None, overlap, None))
        else:
            out.append(TypedBox(box, best[2].ctype, best[0], best[2].id))
    return out
