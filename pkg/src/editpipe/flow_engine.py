"""Dense optical flow between a frame pair, warping, and occlusion analysis.

The builtin estimator is a deterministic coarse-to-fine local matcher
(image pyramid, per-level incremental refinement with bilinear warping).
Precomputed flow from an external estimator can be ingested through
``load_flow`` instead; both paths feed the same statistics and masks.

Conventions: flow maps source coordinates toward the target, i.e.
``src(x, y) ~= tgt(x + u(x, y), y + v(x, y))``. Pixel math runs in
float32, statistics accumulate in float64. Samples that fall outside the
image are invalid and are excluded from statistics, never clamped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class DimensionMismatch(ValueError):
    """Two grids that must share a shape do not."""


class BadMagic(ValueError):
    """Flow file does not start with the expected magic bytes."""


class TruncatedFile(ValueError):
    """Flow file ends before the declared payload."""


class NonFiniteValue(ValueError):
    """Flow file contains NaN or infinity."""


FLO_MAGIC = b"PIEH"


@dataclass
class Image:
    """Pixel grid with values in [0, 1]; grayscale (H, W) or color (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            pass
        elif px.ndim == 3 and px.shape[2] == 3:
            pass
        else:
            raise ValueError(f"expected (H, W) or (H, W, 3) pixels, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass
class FlowField:
    """Per-pixel displacement in pixels; u horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionMismatch(f"u {u.shape} and v {v.shape} must be equal 2-D grids")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NonFiniteValue("flow contains non-finite values")
        self.u = u
        self.v = v

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u.astype(np.float64) ** 2 + self.v.astype(np.float64) ** 2)


@dataclass
class FlowStats:
    """Summary of the per-pixel flow magnitude sqrt(u^2 + v^2)."""

    mean_mag: float
    p50_mag: float
    p95_mag: float
    valid_fraction: float


@dataclass
class OcclusionMask:
    """Boolean grid, True where correspondence between the frames fails."""

    occluded: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occluded, dtype=bool)
        if occ.ndim != 2:
            raise DimensionMismatch(f"expected 2-D mask, got {occ.shape}")
        self.occluded = occ

    @property
    def height(self) -> int:
        return self.occluded.shape[0]

    @property
    def width(self) -> int:
        return self.occluded.shape[1]


# ---------------------------------------------------------------------------
# image I/O helpers
# ---------------------------------------------------------------------------

def load_image(path) -> Image:
    """Read a PNG/JPEG file into a normalized Image."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return Image(arr)


def save_image(img: Image, path) -> None:
    arr = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def save_mask_png(mask: OcclusionMask, path) -> None:
    """Export a mask as 8-bit PNG, 255 = occluded."""
    arr = np.where(mask.occluded, 255, 0).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path)


def to_gray(img: Image) -> np.ndarray:
    """Rec.601 luma as a float32 (H, W) grid."""
    px = img.pixels
    if px.ndim == 2:
        return px
    return (0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]).astype(np.float32)


# ---------------------------------------------------------------------------
# builtin coarse-to-fine estimator
# ---------------------------------------------------------------------------

def _sample_bilinear(grid: np.ndarray, sx: np.ndarray, sy: np.ndarray):
    """Sample grid at fractional (sx, sy); returns values and in-bounds mask."""
    h, w = grid.shape
    values = ndimage.map_coordinates(grid, [sy, sx], order=1, mode="nearest")
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    return values, valid


def _warp_toward(grid: np.ndarray, u: np.ndarray, v: np.ndarray):
    h, w = grid.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    return _sample_bilinear(grid, xx + u, yy + v)


def _resize_bilinear(a: np.ndarray, shape) -> np.ndarray:
    h2, w2 = shape
    h, w = a.shape
    sy = (np.arange(h2, dtype=np.float32) + 0.5) * (h / h2) - 0.5
    sx = (np.arange(w2, dtype=np.float32) + 0.5) * (w / w2) - 0.5
    gy, gx = np.meshgrid(sy, sx, indexing="ij")
    return ndimage.map_coordinates(a, [gy, gx], order=1, mode="nearest").astype(np.float32)


def _pyramid(img: np.ndarray, levels: int) -> list:
    pyr = [img.astype(np.float32)]
    for _ in range(levels - 1):
        prev = pyr[-1]
        if min(prev.shape) < 16:
            break
        smoothed = ndimage.gaussian_filter(prev, sigma=1.0, mode="nearest")
        pyr.append(smoothed[::2, ::2])
    return pyr


def _refine_level(ref, mov, u, v, iterations, window):
    """Incremental local-matching refinement at one pyramid level.

    Solves the 2x2 normal equations of the linearized brightness-constancy
    residual over a box window, then applies a small median filter to
    suppress outliers.
    """
    limit = float(window)
    for _ in range(iterations):
        warped, valid = _warp_toward(mov, u, v)
        gy_r, gx_r = np.gradient(ref)
        gy_w, gx_w = np.gradient(warped)
        ix = (0.5 * (gx_r + gx_w)).astype(np.float32)
        iy = (0.5 * (gy_r + gy_w)).astype(np.float32)
        it = (warped - ref).astype(np.float32)
        it[~valid] = 0.0

        def box(a):
            return ndimage.uniform_filter(a, size=window, mode="nearest")

        sxx = box(ix * ix)
        sxy = box(ix * iy)
        syy = box(iy * iy)
        sxt = box(ix * it)
        syt = box(iy * it)
        det = sxx * syy - sxy * sxy
        ok = det > 1e-9
        safe = np.where(ok, det, 1.0)
        du = np.where(ok, -(syy * sxt - sxy * syt) / safe, 0.0)
        dv = np.where(ok, -(sxx * syt - sxy * sxt) / safe, 0.0)
        u = u + np.clip(du, -limit, limit).astype(np.float32)
        v = v + np.clip(dv, -limit, limit).astype(np.float32)
        u = ndimage.median_filter(u, size=3, mode="nearest")
        v = ndimage.median_filter(v, size=3, mode="nearest")
    return u, v


def estimate_flow(src: Image, tgt: Image, levels: int = 4, iterations: int = 3,
                  window: int = 7) -> FlowField:
    """Dense flow mapping src coordinates toward tgt.

    Deterministic for fixed inputs and parameters. ``levels`` counts
    pyramid levels including full resolution; ``iterations`` is the
    per-level refinement count.
    """
    if (src.height, src.width, src.channels) != (tgt.height, tgt.width, tgt.channels):
        raise DimensionMismatch(
            f"src {src.pixels.shape} vs tgt {tgt.pixels.shape}")
    if levels < 1 or iterations < 1:
        raise ValueError("levels and iterations must be >= 1")
    g0 = to_gray(src)
    g1 = to_gray(tgt)
    pyr0 = _pyramid(g0, levels)
    pyr1 = _pyramid(g1, levels)
    u = np.zeros_like(pyr0[-1])
    v = np.zeros_like(pyr0[-1])
    for level in range(len(pyr0) - 1, -1, -1):
        ref = pyr0[level]
        mov = pyr1[level]
        if u.shape != ref.shape:
            scale_x = ref.shape[1] / u.shape[1]
            scale_y = ref.shape[0] / u.shape[0]
            u = _resize_bilinear(u, ref.shape) * scale_x
            v = _resize_bilinear(v, ref.shape) * scale_y
        u, v = _refine_level(ref, mov, u, v, iterations, window)
    return FlowField(u, v)


# ---------------------------------------------------------------------------
# .flo ingest / export
# ---------------------------------------------------------------------------

def load_flow(path) -> FlowField:
    """Parse a Middlebury .flo file.

    Layout: 4-byte magic "PIEH", little-endian int32 width and height,
    then row-major interleaved (u, v) float32 pairs.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != FLO_MAGIC:
        raise BadMagic(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFile(f"{path}: header truncated")
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise TruncatedFile(f"{path}: nonsensical dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(data)}")
    payload = np.frombuffer(data[12:expected], dtype="<f4").reshape(height, width, 2)
    if not np.all(np.isfinite(payload)):
        raise NonFiniteValue(f"{path}: non-finite flow values")
    return FlowField(payload[:, :, 0].copy(), payload[:, :, 1].copy())


def write_flow(flow: FlowField, path) -> None:
    """Write a FlowField in the .flo layout parsed by load_flow."""
    interleaved = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", flow.width, flow.height))
        f.write(interleaved.tobytes())


# ---------------------------------------------------------------------------
# statistics, warping, occlusion
# ---------------------------------------------------------------------------

def flow_stats(flow: FlowField, valid: np.ndarray | None = None) -> FlowStats:
    """Mean / median / 95th-percentile flow magnitude over valid pixels."""
    mag = flow.magnitude()
    if valid is None:
        valid_fraction = 1.0
        values = mag.ravel()
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != mag.shape:
            raise DimensionMismatch("validity mask shape differs from flow")
        valid_fraction = float(valid.mean()) if valid.size else 0.0
        values = mag[valid]
    if values.size == 0:
        return FlowStats(0.0, 0.0, 0.0, valid_fraction)
    return FlowStats(
        mean_mag=float(values.mean()),
        p50_mag=float(np.percentile(values, 50)),
        p95_mag=float(np.percentile(values, 95)),
        valid_fraction=valid_fraction,
    )


def backward_warp(tgt: Image, flow: FlowField):
    """Reconstruct the source view by sampling tgt at (x + u, y + v).

    Returns the warped image and a boolean validity mask; samples outside
    the image are invalid and zero-filled.
    """
    if (tgt.height, tgt.width) != (flow.height, flow.width):
        raise DimensionMismatch(
            f"tgt {tgt.height}x{tgt.width} vs flow {flow.height}x{flow.width}")
    h, w = flow.height, flow.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    sx = xx + flow.u
    sy = yy + flow.v
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    if tgt.channels == 1:
        out = ndimage.map_coordinates(tgt.pixels, [sy, sx], order=1, mode="nearest")
        out[~valid] = 0.0
    else:
        planes = []
        for c in range(3):
            plane = ndimage.map_coordinates(tgt.pixels[:, :, c], [sy, sx], order=1,
                                            mode="nearest")
            plane[~valid] = 0.0
            planes.append(plane)
        out = np.stack(planes, axis=-1)
    return Image(np.clip(out, 0.0, 1.0)), valid


def occlusion_mask(fwd: FlowField, bwd: FlowField, tau_abs: float = 1.5,
                   tau_rel: float = 0.01) -> OcclusionMask:
    """Forward-backward consistency occlusion test.

    Pixel p is occluded iff
    ``|fwd(p) + bwd(p + fwd(p))| > tau_abs + tau_rel * (|fwd(p)| + |bwd(p + fwd(p))|)``
    with bwd sampled bilinearly; lookups landing outside the image count
    as occluded.
    """
    if (fwd.height, fwd.width) != (bwd.height, bwd.width):
        raise DimensionMismatch("forward and backward flows differ in shape")
    h, w = fwd.height, fwd.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    sx = xx + fwd.u
    sy = yy + fwd.v
    bu, in_bounds = _sample_bilinear(bwd.u, sx, sy)
    bv, _ = _sample_bilinear(bwd.v, sx, sy)
    residual = np.sqrt((fwd.u + bu) ** 2 + (fwd.v + bv) ** 2)
    fwd_mag = np.sqrt(fwd.u ** 2 + fwd.v ** 2)
    bwd_mag = np.sqrt(bu ** 2 + bv ** 2)
    threshold = tau_abs + tau_rel * (fwd_mag + bwd_mag)
    occluded = (residual > threshold) | ~in_bounds
    return OcclusionMask(occluded)


def occlusion_mask_photometric(src: Image, tgt: Image, flow: FlowField,
                               threshold: float = 0.1) -> OcclusionMask:
    """Alternative detector: warp residual above threshold marks occlusion."""
    warped, valid = backward_warp(tgt, flow)
    diff = np.abs(warped.pixels - src.pixels)
    if diff.ndim == 3:
        diff = diff.mean(axis=2)
    return OcclusionMask((diff > threshold) | ~valid)


def occlusion_ratio(mask: OcclusionMask, flow: FlowField,
                    subject_mag_cutoff: float) -> float:
    """Fraction of occluded pixels among the low-motion "background" set.

    Background pixels are those with flow magnitude strictly below
    ``subject_mag_cutoff``; returns 0.0 when that set is empty.
    """
    if (mask.height, mask.width) != (flow.height, flow.width):
        raise DimensionMismatch("mask shape differs from flow")
    background = flow.magnitude() < subject_mag_cutoff
    n_background = int(background.sum())
    if n_background == 0:
        return 0.0
    return float((mask.occluded & background).sum() / n_background)


def default_subject_cutoff(stats: FlowStats, scale: float = 2.0) -> float:
    """Per-pair background/subject split: median magnitude times scale."""
    return scale * stats.p50_mag
