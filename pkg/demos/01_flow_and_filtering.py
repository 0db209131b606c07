"""Walkthrough: optical flow, backward warping, occlusion, and the motion filter.

Builds a textured frame pair with a known shift, estimates dense flow with
the builtin coarse-to-fine matcher, reconstructs the source by backward
warping, derives the forward-backward occlusion mask, and runs the
keep/discard rules.
"""

import numpy as np

from editpipe import flow_engine as fe
from editpipe import motion_filter as mf
from editpipe.synth import shift_wrapped, textured_image

SIZE = 192
SHIFT = (5, -3)

print(f"1) Make a {SIZE}x{SIZE} textured frame and shift it by {SHIFT} px.")
base = textured_image(SIZE, SIZE, np.random.default_rng(7))
src = fe.Image(base)
tgt = fe.Image(shift_wrapped(base, *SHIFT))

print("2) Estimate dense flow (image pyramid + iterative local matching).")
fwd = fe.estimate_flow(src, tgt)
interior = np.s_[24:-24, 24:-24]
print(f"   interior mean flow: u={fwd.u[interior].mean():+.3f}, "
      f"v={fwd.v[interior].mean():+.3f}  (truth {SHIFT[0]:+d}, {SHIFT[1]:+d})")

stats = fe.flow_stats(fwd)
print(f"3) Magnitude statistics: mean={stats.mean_mag:.3f} px, "
      f"p50={stats.p50_mag:.3f} px, p95={stats.p95_mag:.3f} px")

print("4) Backward-warp the target with the estimated flow; it should")
print("   reproduce the source frame on the interior.")
warped, valid = fe.backward_warp(tgt, fwd)
err = np.abs(warped.pixels - src.pixels)[interior]
mse = float((err ** 2).mean())
print(f"   interior PSNR: {10 * np.log10(1.0 / mse):.1f} dB "
      f"(valid fraction {valid.mean():.3f})")

print("5) Forward-backward consistency gives the occlusion mask.")
bwd = fe.estimate_flow(tgt, src)
mask = fe.occlusion_mask(fwd, bwd)
cutoff = fe.default_subject_cutoff(stats)
ratio = fe.occlusion_ratio(mask, fwd, cutoff)
print(f"   occluded fraction: {mask.occluded.mean():.4f}, "
      f"background occlusion ratio: {ratio:.4f} (cutoff {cutoff:.2f} px)")

print("6) Apply the motion filter (thresholds scaled to the frame size).")
thresholds = mf.MotionThresholds().scaled_for(SIZE, SIZE)
verdict = mf.evaluate(stats, ratio, thresholds)
print(f"   verdict: {verdict.decision.value}  "
      f"(bounds: {thresholds.mag_min:.2f}..{thresholds.mag_max:.2f} px, "
      f"occl <= {thresholds.occl_max})")

print("7) The same rules discard degenerate pairs:")
static = fe.FlowStats(mean_mag=0.05, p50_mag=0.04, p95_mag=0.2, valid_fraction=1.0)
print(f"   near-zero motion      -> {mf.evaluate(static, 0.0, thresholds).decision.value}")
wild = fe.FlowStats(mean_mag=60.0, p50_mag=55.0, p95_mag=80.0, valid_fraction=1.0)
print(f"   excessive motion      -> {mf.evaluate(wild, 0.0, thresholds).decision.value}")
unstable = fe.FlowStats(mean_mag=5.0, p50_mag=4.0, p95_mag=9.0, valid_fraction=1.0)
print(f"   background churn 45%  -> {mf.evaluate(unstable, 0.45, thresholds).decision.value}")
