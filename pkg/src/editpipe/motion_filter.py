"""Keep/discard rules over flow statistics and occlusion ratio.

Retains pairs with moderate motion and a stable background. Threshold
defaults are engineering choices calibrated at 512-px frames and scale
linearly with the frame diagonal; override them in the pipeline config.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .flow_engine import FlowStats

_STAT_FIELDS = {"mean": "mean_mag", "p50": "p50_mag", "p95": "p95_mag"}

REFERENCE_FRAME_PX = 512


class Decision(str, enum.Enum):
    PASS = "pass"
    TOO_STATIC = "too_static"
    TOO_DYNAMIC = "too_dynamic"
    BACKGROUND_CHANGED = "background_changed"


@dataclass(frozen=True)
class MotionThresholds:
    """Bounds on the chosen magnitude statistic and the occlusion ratio."""

    mag_min: float = 2.0
    mag_max: float = 40.0
    occl_max: float = 0.3
    stat: str = "mean"

    def __post_init__(self):
        if not 0 <= self.mag_min < self.mag_max:
            raise ValueError(f"need 0 <= mag_min < mag_max, got {self.mag_min}, {self.mag_max}")
        if not 0 <= self.occl_max <= 1:
            raise ValueError(f"occl_max must be in [0, 1], got {self.occl_max}")
        if self.stat not in _STAT_FIELDS:
            raise ValueError(f"stat must be one of {sorted(_STAT_FIELDS)}, got {self.stat!r}")

    def scaled_for(self, width: int, height: int) -> "MotionThresholds":
        """Magnitude bounds rescaled by frame diagonal relative to 512 px."""
        factor = math.hypot(width, height) / math.hypot(REFERENCE_FRAME_PX, REFERENCE_FRAME_PX)
        return replace(self, mag_min=self.mag_min * factor, mag_max=self.mag_max * factor)


@dataclass
class FilterVerdict:
    decision: Decision
    stats: FlowStats
    occl_ratio: float


def evaluate(stats: FlowStats, occl: float, th: MotionThresholds) -> FilterVerdict:
    """Apply the checks in order: too static, too dynamic, background changed.

    Comparisons are strict, so a value exactly at a threshold passes that
    check. Exactly one decision results for any input.
    """
    value = getattr(stats, _STAT_FIELDS[th.stat])
    if value < th.mag_min:
        decision = Decision.TOO_STATIC
    elif value > th.mag_max:
        decision = Decision.TOO_DYNAMIC
    elif occl > th.occl_max:
        decision = Decision.BACKGROUND_CHANGED
    else:
        decision = Decision.PASS
    return FilterVerdict(decision=decision, stats=stats, occl_ratio=occl)
