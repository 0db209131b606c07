"""Synthetic frame corpora for tests, benchmarks, and demo scripts.

Clips are smoothed-noise textures translated frame to frame (content wraps
at the borders, which keeps the pairs globally consistent). The default
20-clip corpus mixes clips that should pass motion filtering with clips
engineered to be blocked by captions, too short, too static, too dynamic,
or background-unstable, so every pipeline counter gets exercised.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .flow_engine import Image, save_image


def textured_image(height: int, width: int, rng, sigma: float = 2.0) -> np.ndarray:
    """Smoothed noise stretched to full contrast; good texture for matching."""
    noise = rng.standard_normal((height, width))
    smooth = ndimage.gaussian_filter(noise, sigma=sigma, mode="wrap")
    lo, hi = smooth.min(), smooth.max()
    return ((smooth - lo) / (hi - lo)).astype(np.float32)


def shift_wrapped(pixels: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate content by (dx, dy) pixels with periodic wrap.

    Integer shifts are exact (np.roll); fractional shifts interpolate.
    """
    if float(dx).is_integer() and float(dy).is_integer():
        return np.roll(pixels, shift=(int(dy), int(dx)), axis=(0, 1))
    h, w = pixels.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(pixels, [(yy - dy) % h, (xx - dx) % w],
                                   order=1, mode="wrap").astype(pixels.dtype)


def _write_clip(root: Path, clip_id: str, frames, fps: float, caption: str) -> dict:
    clip_dir = root / clip_id
    clip_dir.mkdir(parents=True, exist_ok=True)
    for index, pixels in frames:
        save_image(Image(np.clip(pixels, 0.0, 1.0)), clip_dir / f"{index:06d}.png")
    return {"id": clip_id, "frames_dir": clip_id, "fps": fps, "caption": caption}


def make_shift_clip(root: Path, clip_id: str, rng, size: int, fps: float,
                    n_frames: int, step_px: float, caption: str,
                    cut_band: float = 0.0) -> dict:
    """A clip whose content translates by step_px per frame (wrapping).

    With ``cut_band`` > 0, the later half of the clip replaces a vertical
    band of that width fraction with fresh texture, breaking
    correspondence there while the rest keeps moving coherently.
    """
    base = textured_image(size, size, rng)
    frames = []
    for k in range(n_frames):
        pixels = shift_wrapped(base, k * step_px, 0.0)
        if cut_band > 0.0 and k >= n_frames // 2:
            other = textured_image(size, size, np.random.default_rng(rng.integers(2 ** 31)))
            lo = int(size * (0.5 - cut_band / 2))
            hi = int(size * (0.5 + cut_band / 2))
            pixels = pixels.copy()
            pixels[:, lo:hi] = other[:, lo:hi]
        frames.append((k, pixels))
    return _write_clip(root, clip_id, frames, fps, caption)


_KEEP_CAPTIONS = [
    "a dog running on the beach",
    "a cyclist turning at the corner",
    "a child raising a kite",
    "a boat drifting toward the pier",
    "a barista pouring coffee",
    "a cat jumping off the couch",
    "a dancer spinning on stage",
    "traffic moving through the junction",
]

_BLOCKED_CAPTIONS = [
    "a still landscape photo at dusk",
    "abstract shapes pulsing to music",
]


def make_synthetic_corpus(root, n_clips: int = 20, size: int = 96, fps: float = 10.0,
                          interval_s: float = 3.0, seed: int = 0) -> Path:
    """Build a corpus under ``root`` and return the manifest path.

    Two clips carry blocklisted captions, two are shorter than the
    sampling interval, and the rest cycle through static / moderate /
    excessive / background-changing motion profiles.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    frames_per_pair = int(round(interval_s * fps))
    entries = []
    for i in range(n_clips):
        clip_id = f"clip{i:02d}"
        clip_rng = np.random.default_rng(seed * 1000 + i)
        if i < 2:
            entries.append(make_shift_clip(
                root, clip_id, clip_rng, size, fps, frames_per_pair + 1,
                step_px=0.2, caption=_BLOCKED_CAPTIONS[i]))
            continue
        caption = _KEEP_CAPTIONS[i % len(_KEEP_CAPTIONS)]
        if i < 4:
            # too short: ends before one full interval
            entries.append(make_shift_clip(
                root, clip_id, clip_rng, size, fps, frames_per_pair // 2,
                step_px=0.2, caption=caption))
            continue
        profile = (i - 4) % 4
        if profile == 0:      # near-zero motion
            step, band = 0.005, 0.0
        elif profile == 1:    # moderate, trackable motion
            step, band = 0.2, 0.0
        elif profile == 2:    # excessive motion
            step, band = 0.4, 0.0
        else:                 # moderate motion but unstable background
            step, band = 4.0 / frames_per_pair, 0.4
        entries.append(make_shift_clip(
            root, clip_id, clip_rng, size, fps, frames_per_pair + 1,
            step_px=step, caption=caption, cut_band=band))
    manifest = root / "corpus.jsonl"
    with open(manifest, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest


def make_pair_corpus(root, n_pairs: int, size: int = 256, fps: float = 10.0,
                     interval_s: float = 3.0, shift_px: float = 4.0,
                     seed: int = 0) -> Path:
    """Benchmark corpus: each clip holds exactly one (first, last) frame pair."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    last = int(round(interval_s * fps))
    entries = []
    for i in range(n_pairs):
        rng = np.random.default_rng(seed * 7919 + i)
        base = textured_image(size, size, rng)
        frames = [(0, base), (last, shift_wrapped(base, shift_px, 0.0))]
        entries.append(_write_clip(root, f"pair{i:04d}", frames, fps,
                                   _KEEP_CAPTIONS[i % len(_KEEP_CAPTIONS)]))
    manifest = root / "corpus.jsonl"
    with open(manifest, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest
