"""Latent-space conditioning arithmetic for instruction-driven editing.

Implements width-concatenation conditioning (the source latent sits to the
left of the noisy target latent and the prediction's right half is
cropped), the channel-concatenation baseline, the forward noising closed
form, deterministic DDIM stepping, and mask-localized sampling that blends
the edit trajectory with the forward-diffused source.

Latents are plain numpy arrays shaped (C, H, W); ``LatentGrid`` is an
alias. Operations preserve the input dtype, so float64 latents keep full
precision while float32 stays cheap. All randomness enters through
explicit seeds.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# (C, H, W) real-valued tensor standing in for an image's VAE latent
LatentGrid = np.ndarray

# (H, W) values in [0, 1]; 1 = edit region, 0 = keep source
EditMask = np.ndarray


class ShapeMismatch(ValueError):
    """Latents that must share a shape do not."""


class TimestepOutOfRange(ValueError):
    """t outside 1..T."""


class TimestepOrder(ValueError):
    """DDIM step requires t > t_prev >= 0."""


class OddWidth(ValueError):
    """crop_width needs an even width."""


@dataclass
class DiffusionSchedule:
    """Per-step variances and their cumulative signal coefficients.

    ``alpha_bar`` has length T + 1 with ``alpha_bar[0] = 1`` so the final
    DDIM step (t_prev = 0) needs no special casing. The cumulative product
    is accumulated in float64.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or alpha_bar.shape != (beta.shape[0] + 1,):
            raise ValueError("beta must be (T,) and alpha_bar (T+1,)")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if alpha_bar[0] != 1.0 or np.any(np.diff(alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must start at 1 and be strictly decreasing")
        self.beta = beta
        self.alpha_bar = alpha_bar

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "DiffusionSchedule":
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
        return cls(beta=beta, alpha_bar=alpha_bar)

    def alpha_bar_at(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise TimestepOutOfRange(f"t={t} outside 0..{self.T}")
        return float(self.alpha_bar[t])


class BoundarySchedule:
    """Schedule stub whose alpha_bar may hit exactly 1 or 0.

    Useful for exercising the no-noise / all-noise limits of the closed
    forms, which a strictly-positive beta schedule can never reach.
    """

    def __init__(self, alpha_bar_values):
        values = np.asarray(alpha_bar_values, dtype=np.float64)
        if values.ndim != 1 or values[0] != 1.0 or np.any(np.diff(values) > 0.0):
            raise ValueError("alpha_bar must start at 1 and be non-increasing")
        self.alpha_bar = values

    @property
    def T(self) -> int:
        return self.alpha_bar.shape[0] - 1

    def alpha_bar_at(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise TimestepOutOfRange(f"t={t} outside 0..{self.T}")
        return float(self.alpha_bar[t])


def _check_latent(z) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim != 3:
        raise ShapeMismatch(f"latent must be (C, H, W), got {z.shape}")
    return z


def forward_diffuse(z0: LatentGrid, t: int, eps: LatentGrid, sched) -> LatentGrid:
    """Closed-form noising: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps."""
    z0 = _check_latent(z0)
    eps = _check_latent(eps)
    if z0.shape != eps.shape:
        raise ShapeMismatch(f"z0 {z0.shape} vs eps {eps.shape}")
    if not 1 <= t <= sched.T:
        raise TimestepOutOfRange(f"t={t} outside 1..{sched.T}")
    ab = sched.alpha_bar_at(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def concat_width(zs: LatentGrid, ze_t: LatentGrid) -> LatentGrid:
    """Source latent on the left, noisy target on the right: (C, H, 2W)."""
    zs = _check_latent(zs)
    ze_t = _check_latent(ze_t)
    if zs.shape != ze_t.shape:
        raise ShapeMismatch(f"zs {zs.shape} vs ze_t {ze_t.shape}")
    return np.concatenate([zs, ze_t], axis=2)


def crop_width(z: LatentGrid) -> LatentGrid:
    """Right half of a width-concatenated latent."""
    z = _check_latent(z)
    if z.shape[2] % 2 != 0:
        raise OddWidth(f"width {z.shape[2]} is not even")
    return z[:, :, z.shape[2] // 2:]


def concat_channel(zs: LatentGrid, ze_t: LatentGrid) -> LatentGrid:
    """Channel-stacked baseline: (C1 + C2, H, W), spatial dims unchanged."""
    zs = _check_latent(zs)
    ze_t = _check_latent(ze_t)
    if zs.shape[1:] != ze_t.shape[1:]:
        raise ShapeMismatch(f"spatial dims differ: {zs.shape} vs {ze_t.shape}")
    return np.concatenate([zs, ze_t], axis=0)


def edit_loss(zs: LatentGrid, ze: LatentGrid, cond, t: int, eps: LatentGrid,
              predictor, sched) -> float:
    """Denoising loss of the width-conditioned prediction.

    Noises the target to t, concatenates the source on the left, and
    returns the mean squared error between eps and the cropped right half
    of the prediction.
    """
    zs = _check_latent(zs)
    ze = _check_latent(ze)
    eps = _check_latent(eps)
    if not (zs.shape == ze.shape == eps.shape):
        raise ShapeMismatch(f"zs {zs.shape}, ze {ze.shape}, eps {eps.shape} must match")
    ze_t = forward_diffuse(ze, t, eps, sched)
    z_t = concat_width(zs, ze_t)
    pred = predictor(z_t, cond, t)
    if np.asarray(pred).shape != z_t.shape:
        raise ShapeMismatch(f"predictor output {np.asarray(pred).shape} != input {z_t.shape}")
    residual = np.asarray(eps, dtype=np.float64) - np.asarray(crop_width(pred), dtype=np.float64)
    return float(np.mean(residual ** 2))


def ddim_step(z_t: LatentGrid, eps_hat: LatentGrid, t: int, t_prev: int,
              sched) -> LatentGrid:
    """One deterministic DDIM update from t to t_prev (eta = 0).

    Recovers the clean-latent estimate from the noise prediction and
    re-noises it at the earlier timestep:
    ``x0_hat = (z_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)``,
    then ``sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev) * eps_hat``.
    """
    z_t = _check_latent(z_t)
    eps_hat = _check_latent(eps_hat)
    if z_t.shape != eps_hat.shape:
        raise ShapeMismatch(f"z_t {z_t.shape} vs eps_hat {eps_hat.shape}")
    if not (t > t_prev >= 0):
        raise TimestepOrder(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    x0_hat = (z_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def uniform_timesteps(T: int, steps: int) -> list:
    """(t, t_prev) pairs at uniform stride T/steps, ending at t_prev = 0."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must be in 1..{T}, got {steps}")
    stride = T // steps
    ts = list(range(T, 0, -stride))[:steps]
    return [(t, ts[i + 1] if i + 1 < len(ts) else 0) for i, t in enumerate(ts)]


def masked_blend(zs_tm1: LatentGrid, z_tm1: LatentGrid, m: EditMask) -> LatentGrid:
    """Per-pixel convex combination: (1 - m) * source + m * edit.

    The mask is (H, W) in [0, 1] and broadcasts across channels.
    """
    zs_tm1 = _check_latent(zs_tm1)
    z_tm1 = _check_latent(z_tm1)
    m = np.asarray(m)
    if zs_tm1.shape != z_tm1.shape:
        raise ShapeMismatch(f"latents differ: {zs_tm1.shape} vs {z_tm1.shape}")
    if m.ndim != 2 or m.shape != zs_tm1.shape[1:]:
        raise ShapeMismatch(f"mask {m.shape} vs latent spatial {zs_tm1.shape[1:]}")
    mb = m[None, :, :]
    return (1.0 - mb) * zs_tm1 + mb * z_tm1


def _area_weights(n_src: int, n_dst: int) -> np.ndarray:
    # row i holds the normalized overlap of destination cell i with each source cell
    edges = np.linspace(0.0, n_src, n_dst + 1)
    weights = np.zeros((n_dst, n_src), dtype=np.float64)
    for i in range(n_dst):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_src)):
            overlap = min(hi, j + 1.0) - max(lo, float(j))
            if overlap > 0:
                weights[i, j] = overlap
        weights[i] /= weights[i].sum()
    return weights


def resize_mask(m: EditMask, h: int, w: int) -> EditMask:
    """Area-average resampling to (h, w); output stays within [0, 1]."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got {m.shape}")
    if h < 1 or w < 1:
        raise ValueError("target dims must be positive")
    if m.shape == (h, w):
        return m.copy()
    rows = _area_weights(m.shape[0], h)
    cols = _area_weights(m.shape[1], w)
    return rows @ m @ cols.T


def ddim_sample(zs: LatentGrid, cond, predictor, sched, steps: int = 50,
                seed: int = 0) -> LatentGrid:
    """Unmasked sampling: every step conditions on the source latent."""
    return masked_ddim_sample(zs, cond, None, predictor, sched, steps=steps, seed=seed)


def masked_ddim_sample(zs: LatentGrid, cond, m: EditMask | None, predictor, sched,
                       steps: int = 50, seed: int = 0,
                       share_source_noise: bool = False) -> LatentGrid:
    """Mask-localized DDIM sampling from a seeded Gaussian.

    Each step predicts noise on the width-concatenated (source, current)
    latent, crops the right half, takes a DDIM step, forward-diffuses the
    source latent to the same timestep, and blends the two per the mask.
    ``m = None`` skips blending entirely. With ``share_source_noise`` the
    source trajectory reuses one noise draw instead of resampling per step.
    """
    zs = _check_latent(zs)
    if m is not None:
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {m.shape}")
        if m.shape != zs.shape[1:]:
            m = resize_mask(m, zs.shape[1], zs.shape[2])
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(zs.shape).astype(zs.dtype, copy=False)
    shared_eps = None
    if share_source_noise:
        shared_eps = rng.standard_normal(zs.shape).astype(zs.dtype, copy=False)
    for t, t_prev in uniform_timesteps(sched.T, steps):
        pred = predictor(concat_width(zs, z), cond, t)
        eps_hat = crop_width(np.asarray(pred))
        z_next = ddim_step(z, eps_hat, t, t_prev, sched)
        if m is None:
            z = z_next
            continue
        if t_prev == 0:
            zs_prev = zs
        else:
            eps_src = shared_eps if share_source_noise else \
                rng.standard_normal(zs.shape).astype(zs.dtype, copy=False)
            zs_prev = forward_diffuse(zs, t_prev, eps_src, sched)
        z = masked_blend(zs_prev, z_next, m)
    return z


# ---------------------------------------------------------------------------
# oracle / mock predictors (no neural network in this package)
# ---------------------------------------------------------------------------

def zero_predictor(z: LatentGrid, cond, t: int) -> LatentGrid:
    return np.zeros_like(z)


def make_fixed_noise_predictor(eps_true: LatentGrid):
    """Always predicts the given noise on the right half (left half zero)."""
    eps_true = _check_latent(eps_true)

    def predict(z, cond, t):
        left = np.zeros_like(eps_true)
        return concat_width(left, eps_true.astype(z.dtype, copy=False))

    return predict


def make_pull_predictor(target: LatentGrid, sched):
    """Predicts the exact noise that makes the DDIM trajectory land on target."""
    target = _check_latent(target)

    def predict(z, cond, t):
        right = crop_width(np.asarray(z))
        ab = sched.alpha_bar_at(t)
        eps = (right - math.sqrt(ab) * target) / math.sqrt(1.0 - ab)
        return concat_width(np.zeros_like(eps), eps)

    return predict


def make_hash_predictor(scale: float = 1.0):
    """Deterministic pseudo-random prediction derived from (t, shape)."""

    def predict(z, cond, t):
        z = np.asarray(z)
        rng = np.random.default_rng(abs(hash((int(t), z.shape))) % (2 ** 32))
        return (scale * rng.standard_normal(z.shape)).astype(z.dtype, copy=False)

    return predict


def make_predictor(name: str, zs: LatentGrid | None = None, sched=None):
    """Named predictors for the edit-sim command and golden tests."""
    if name == "zero":
        return zero_predictor
    if name == "hash":
        return make_hash_predictor()
    if name == "toward-source":
        if zs is None or sched is None:
            raise ValueError("toward-source predictor needs the source latent and schedule")
        return make_pull_predictor(zs, sched)
    raise ValueError(f"unknown predictor {name!r}; try zero, hash, toward-source")


# ---------------------------------------------------------------------------
# latent binary I/O
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<HHH2x")  # C, H, W as uint16, padded to 8 bytes


def write_latent(path, z: LatentGrid) -> None:
    """Raw little-endian float32 dump with an 8-byte (C, H, W) header.

    A JSON sidecar at ``<path>.json`` records the shape and dtype for
    tools that cannot parse the header.
    """
    z = _check_latent(z)
    c, h, w = z.shape
    if max(c, h, w) > 0xFFFF:
        raise ValueError(f"dimensions {z.shape} exceed the uint16 header")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(c, h, w))
        f.write(np.ascontiguousarray(z, dtype="<f4").tobytes())
    sidecar = {"channels": c, "height": h, "width": w,
               "dtype": "float32", "layout": "CHW"}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n",
                                         encoding="utf-8")


def read_latent(path) -> LatentGrid:
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        c, h, w = _HEADER.unpack(header)
        payload = f.read(4 * c * h * w)
    if len(payload) < 4 * c * h * w:
        raise ValueError(f"{path}: truncated payload")
    z = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{path}: non-finite latent values")
    return z.copy()
