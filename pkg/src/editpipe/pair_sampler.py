"""Corpus scanning, caption keyword prefiltering, and fixed-interval pair sampling.

A corpus is a JSONL manifest, one clip per line with fields
``{id, frames_dir, fps, caption?}``. Frames are decoded image files
(PNG/JPEG) with zero-padded numeric filenames; raw video is out of scope,
but :func:`decode_video` can shell out to a user-supplied decoder.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BLOCKLIST = frozenset({"landscape", "abstract", "still"})

SKIP_SEQUENCE_TOO_SHORT = "sequence_too_short"

_FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class FrameRef:
    """One decoded frame: its index within the clip and the image path."""

    index: int
    path: str


@dataclass
class FrameSequence:
    """A decoded clip: ordered frames plus playback rate and optional caption."""

    id: str
    fps: float
    frames: list
    caption: str | None = None

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"{self.id}: fps must be positive, got {self.fps}")
        if not self.frames:
            raise ValueError(f"{self.id}: sequence has no frames")
        indices = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"{self.id}: frame indices must be strictly increasing")

    @property
    def duration_s(self) -> float:
        """Time span between first and last frame."""
        return (self.frames[-1].index - self.frames[0].index) / self.fps

    def nearest_frame(self, t: float) -> int:
        """Position (list offset) of the frame closest to time t past the first frame."""
        times = (np.array([f.index for f in self.frames]) - self.frames[0].index) / self.fps
        return int(np.argmin(np.abs(times - t)))


@dataclass(frozen=True)
class FramePairCandidate:
    """A (source, target) frame pair proposed for triplet construction."""

    sequence_id: str
    src_index: int
    tgt_index: int
    interval_s: float
    reversed_roles: bool = False

    def __post_init__(self):
        if self.tgt_index <= self.src_index:
            raise ValueError(
                f"{self.sequence_id}: tgt_index {self.tgt_index} must exceed "
                f"src_index {self.src_index}")


@dataclass
class KeywordFilterConfig:
    """Whole-word caption blocklist; clips whose captions match are dropped."""

    blocklist: frozenset = field(default_factory=lambda: DEFAULT_BLOCKLIST)
    enabled: bool = True

    def __post_init__(self):
        self.blocklist = frozenset(str(k).lower() for k in self.blocklist)
        if self.enabled and not self.blocklist:
            raise ValueError("keyword filter enabled with empty blocklist")


def keyword_filter(caption: str | None, cfg: KeywordFilterConfig) -> bool:
    """True = keep the clip. Matching is whole-word and case-insensitive.

    An empty or missing caption keeps the clip: no evidence to reject.
    """
    if not cfg.enabled or not caption:
        return True
    lowered = caption.lower()
    for keyword in cfg.blocklist:
        if re.search(r"\b" + re.escape(keyword) + r"\b", lowered):
            return False
    return True


def sample_pairs(seq: FrameSequence, interval_s: float = 3.0,
                 stride_s: float | None = None, counters: dict | None = None) -> list:
    """Emit pairs (t, t + interval_s) for t = 0, stride, 2*stride, ...

    Indices are the nearest frames to the target timestamps. Clips shorter
    than the interval produce no pairs; the skip is tallied under
    ``counters["sequence_too_short"]`` when a counter dict is given.
    Stride defaults to the interval (non-overlapping pairs).
    """
    if interval_s <= 0:
        raise ValueError(f"interval_s must be positive, got {interval_s}")
    if stride_s is None:
        stride_s = interval_s
    if stride_s <= 0:
        raise ValueError(f"stride_s must be positive, got {stride_s}")

    duration = seq.duration_s
    if duration < interval_s:
        if counters is not None:
            counters[SKIP_SEQUENCE_TOO_SHORT] = counters.get(SKIP_SEQUENCE_TOO_SHORT, 0) + 1
        return []

    pairs = []
    seen = set()
    k = 0
    # epsilon absorbs float noise at the duration boundary
    while k * stride_s + interval_s <= duration + 1e-9:
        t = k * stride_s
        src_pos = seq.nearest_frame(t)
        tgt_pos = seq.nearest_frame(t + interval_s)
        k += 1
        src = seq.frames[src_pos].index
        tgt = seq.frames[tgt_pos].index
        if tgt <= src or (src, tgt) in seen:
            continue
        seen.add((src, tgt))
        pairs.append(FramePairCandidate(
            sequence_id=seq.id,
            src_index=src,
            tgt_index=tgt,
            interval_s=(tgt - src) / seq.fps,
        ))
    return pairs


def with_reversed(pairs: list) -> list:
    """Augment with role-swapped copies (target edited toward source)."""
    out = []
    for p in pairs:
        out.append(p)
        out.append(FramePairCandidate(
            sequence_id=p.sequence_id,
            src_index=p.src_index,
            tgt_index=p.tgt_index,
            interval_s=p.interval_s,
            reversed_roles=True,
        ))
    return out


# ---------------------------------------------------------------------------
# corpus manifest
# ---------------------------------------------------------------------------

def discover_frames(frames_dir) -> list:
    """Frame files in a clip directory, ordered by their numeric stem."""
    frames = []
    for path in Path(frames_dir).iterdir():
        if path.suffix.lower() not in _FRAME_SUFFIXES:
            continue
        try:
            index = int(path.stem)
        except ValueError:
            continue
        frames.append(FrameRef(index=index, path=str(path)))
    frames.sort(key=lambda f: f.index)
    return frames


def load_corpus_manifest(path) -> list:
    """Parse the corpus manifest (JSONL of {id, frames_dir, fps, caption?})."""
    root = Path(path).parent
    sequences = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
            for key in ("id", "frames_dir", "fps"):
                if key not in entry:
                    raise ValueError(f"{path}:{line_no}: missing field {key!r}")
            frames_dir = Path(entry["frames_dir"])
            if not frames_dir.is_absolute():
                frames_dir = root / frames_dir
            sequences.append(FrameSequence(
                id=str(entry["id"]),
                fps=float(entry["fps"]),
                frames=discover_frames(frames_dir),
                caption=entry.get("caption"),
            ))
    return sequences


def decode_video(video_path, frames_dir, cmd_template: str) -> None:
    """Optional hook: run a user-supplied decoder command for raw video.

    The template receives {video} and {out_dir}; e.g.
    ``ffmpeg -i {video} {out_dir}/%06d.png``.
    """
    Path(frames_dir).mkdir(parents=True, exist_ok=True)
    cmd = [part.format(video=str(video_path), out_dir=str(frames_dir))
           for part in shlex.split(cmd_template)]
    subprocess.run(cmd, check=True)
