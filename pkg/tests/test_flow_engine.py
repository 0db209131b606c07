import struct

import numpy as np
import pytest
from conftest import interior_slice, make_textured_pair, psnr

from editpipe import flow_engine as fe


def uniform_flow(h, w, u, v):
    return fe.FlowField(np.full((h, w), u, np.float32), np.full((h, w), v, np.float32))


class TestEstimateFlow:
    def test_plus_three_zero(self):
        src, tgt = make_textured_pair(256, 3, 0, seed=11)
        flow = fe.estimate_flow(src, tgt)
        s = interior_slice((256, 256), 24)
        assert abs(flow.u[s].mean() - 3.0) < 0.5
        assert abs(flow.v[s].mean() - 0.0) < 0.5

    def test_identical_frames_near_zero(self):
        src, _ = make_textured_pair(256, 0, 0, seed=12)
        flow = fe.estimate_flow(src, src)
        assert flow.magnitude().mean() < 0.05

    def test_zero_minus_five(self):
        src, tgt = make_textured_pair(256, 0, -5, seed=13)
        flow = fe.estimate_flow(src, tgt)
        s = interior_slice((256, 256), 24)
        assert abs(flow.u[s].mean() - 0.0) < 0.5
        assert abs(flow.v[s].mean() + 5.0) < 0.5

    def test_deterministic(self):
        src, tgt = make_textured_pair(128, 4, -2, seed=14)
        f1 = fe.estimate_flow(src, tgt)
        f2 = fe.estimate_flow(src, tgt)
        assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.v, f2.v)

    def test_dimension_mismatch(self):
        src, _ = make_textured_pair(64, 0, 0, seed=15)
        tgt, _ = make_textured_pair(32, 0, 0, seed=16)
        with pytest.raises(fe.DimensionMismatch):
            fe.estimate_flow(src, tgt)

    def test_color_input(self):
        gray, tgt_gray = make_textured_pair(128, 5, 1, seed=17)
        src = fe.Image(np.stack([gray.pixels] * 3, axis=-1))
        tgt = fe.Image(np.stack([tgt_gray.pixels] * 3, axis=-1))
        flow = fe.estimate_flow(src, tgt)
        s = interior_slice((128, 128), 20)
        assert abs(flow.u[s].mean() - 5.0) < 0.5


class TestFloIO:
    def test_one_pixel_file(self, tmp_path):
        path = tmp_path / "one.flo"
        path.write_bytes(b"PIEH" + struct.pack("<ii", 1, 1) + struct.pack("<ff", 2.0, 0.0))
        flow = fe.load_flow(path)
        assert (flow.width, flow.height) == (1, 1)
        assert flow.u[0, 0] == 2.0 and flow.v[0, 0] == 0.0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(b"XXXX" + struct.pack("<ii", 1, 1) + struct.pack("<ff", 0, 0))
        with pytest.raises(fe.BadMagic):
            fe.load_flow(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "trunc.flo"
        path.write_bytes(b"PIEH" + struct.pack("<ii", 4, 4) + b"\x00" * 16)
        with pytest.raises(fe.TruncatedFile):
            fe.load_flow(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "nan.flo"
        path.write_bytes(b"PIEH" + struct.pack("<ii", 1, 1) +
                         struct.pack("<ff", float("nan"), 0.0))
        with pytest.raises(fe.NonFiniteValue):
            fe.load_flow(path)

    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        flow = fe.FlowField(rng.standard_normal((8, 8)).astype(np.float32),
                            rng.standard_normal((8, 8)).astype(np.float32))
        path = tmp_path / "rt.flo"
        fe.write_flow(flow, path)
        loaded = fe.load_flow(path)
        assert np.array_equal(loaded.u, flow.u)
        assert np.array_equal(loaded.v, flow.v)


class TestFlowStats:
    def test_three_four_five(self):
        stats = fe.flow_stats(uniform_flow(6, 6, 3.0, 4.0))
        assert stats.mean_mag == pytest.approx(5.0)
        assert stats.p50_mag == pytest.approx(5.0)
        assert stats.p95_mag == pytest.approx(5.0)
        assert stats.valid_fraction == 1.0

    def test_zero_flow(self):
        stats = fe.flow_stats(uniform_flow(4, 4, 0.0, 0.0))
        assert (stats.mean_mag, stats.p50_mag, stats.p95_mag) == (0.0, 0.0, 0.0)

    def test_half_and_half_mean(self):
        u = np.zeros((2, 2), np.float32)
        v = np.array([[0.0, 0.0], [2.0, 2.0]], np.float32)
        stats = fe.flow_stats(fe.FlowField(u, v))
        assert stats.mean_mag == pytest.approx(1.0)

    def test_negation_invariance(self):
        rng = np.random.default_rng(4)
        u = rng.standard_normal((16, 16)).astype(np.float32)
        v = rng.standard_normal((16, 16)).astype(np.float32)
        a = fe.flow_stats(fe.FlowField(u, v))
        b = fe.flow_stats(fe.FlowField(-u, -v))
        assert a == b

    def test_validity_mask(self):
        valid = np.zeros((4, 4), bool)
        valid[0] = True
        stats = fe.flow_stats(uniform_flow(4, 4, 3.0, 4.0), valid=valid)
        assert stats.valid_fraction == 0.25
        assert stats.mean_mag == pytest.approx(5.0)


class TestBackwardWarp:
    def test_zero_flow_identity(self):
        src, _ = make_textured_pair(64, 0, 0, seed=20)
        out, valid = fe.backward_warp(src, uniform_flow(64, 64, 0.0, 0.0))
        assert np.array_equal(out.pixels, src.pixels)
        assert valid.all()

    def test_bilinear_halfway(self):
        img = fe.Image(np.array([[0.0, 1.0]], np.float32))
        flow = fe.FlowField(np.array([[0.5, 0.0]], np.float32),
                            np.zeros((1, 2), np.float32))
        out, valid = fe.backward_warp(img, flow)
        # neighboring values 0 and 10 (scaled to 0 and 1.0): halfway = 0.5
        assert out.pixels[0, 0] == pytest.approx(0.5)
        assert valid[0, 0]

    def test_out_of_range_invalid(self):
        img = fe.Image(np.ones((4, 4), np.float32))
        out, valid = fe.backward_warp(img, uniform_flow(4, 4, 10.0, 0.0))
        assert not valid.any()
        assert np.all(out.pixels == 0.0)

    def test_reconstructs_shifted_source(self):
        src, tgt = make_textured_pair(128, 2, 0, seed=21)
        out, valid = fe.backward_warp(tgt, uniform_flow(128, 128, 2.0, 0.0))
        s = interior_slice((128, 128), 8)
        assert psnr(out.pixels[s], src.pixels[s]) > 30.0

    def test_color_channels(self):
        gray, _ = make_textured_pair(32, 0, 0, seed=22)
        img = fe.Image(np.stack([gray.pixels] * 3, axis=-1))
        out, valid = fe.backward_warp(img, uniform_flow(32, 32, 0.0, 0.0))
        assert np.array_equal(out.pixels, img.pixels)

    def test_dimension_mismatch(self):
        img = fe.Image(np.ones((4, 4), np.float32))
        with pytest.raises(fe.DimensionMismatch):
            fe.backward_warp(img, uniform_flow(5, 5, 0.0, 0.0))


class TestOcclusionMask:
    def test_consistent_uniform_flows(self):
        fwd = uniform_flow(32, 32, 5.0, 0.0)
        bwd = uniform_flow(32, 32, -5.0, 0.0)
        mask = fe.occlusion_mask(fwd, bwd)
        interior = mask.occluded[:, :-5]
        assert not interior.any()

    def test_inconsistent_everywhere(self):
        fwd = uniform_flow(32, 32, 5.0, 0.0)
        bwd = uniform_flow(32, 32, 0.0, 0.0)
        mask = fe.occlusion_mask(fwd, bwd, tau_abs=1.5, tau_rel=0.01)
        assert mask.occluded[:, :-5].all()

    def test_out_of_range_lookup_occluded(self):
        fwd = uniform_flow(8, 8, 100.0, 0.0)
        bwd = uniform_flow(8, 8, -100.0, 0.0)
        assert fe.occlusion_mask(fwd, bwd).occluded.all()

    def test_swap_symmetry_on_consistent_fields(self):
        fwd = uniform_flow(24, 24, 4.0, -2.0)
        bwd = uniform_flow(24, 24, -4.0, 2.0)
        a = fe.occlusion_mask(fwd, bwd)
        b = fe.occlusion_mask(bwd, fwd)
        assert a.occluded.sum() == b.occluded.sum()

    def test_moving_occluder_area(self):
        # 32x32 occluder moving +8 px over a static background: the
        # analytically covered band is 32 * 8 px
        h = w = 128
        d, size, x0, y0 = 8, 32, 30, 48
        fu = np.zeros((h, w), np.float32)
        bu = np.zeros((h, w), np.float32)
        fu[y0:y0 + size, x0:x0 + size] = d
        bu[y0:y0 + size, x0 + d:x0 + d + size] = -d
        zeros = np.zeros((h, w), np.float32)
        mask = fe.occlusion_mask(fe.FlowField(fu, zeros), fe.FlowField(bu, zeros))
        analytic = size * d
        measured = int(mask.occluded.sum())
        assert abs(measured - analytic) <= 0.25 * analytic

    def test_photometric_detector(self):
        src, tgt = make_textured_pair(64, 0, 0, seed=23)
        changed = tgt.pixels.copy()
        changed[:, 32:] = 1.0 - changed[:, 32:]
        flow = uniform_flow(64, 64, 0.0, 0.0)
        mask = fe.occlusion_mask_photometric(src, fe.Image(changed), flow)
        left = mask.occluded[:, :32].mean()
        right = mask.occluded[:, 32:].mean()
        assert left < 0.1 and right > 0.5


class TestOcclusionRatio:
    def test_counting(self):
        occ = np.zeros((10, 10), bool)
        occ[:5, :5] = True
        ratio = fe.occlusion_ratio(fe.OcclusionMask(occ), uniform_flow(10, 10, 0, 0),
                                   subject_mag_cutoff=1.0)
        assert ratio == 0.25

    def test_empty_mask(self):
        occ = np.zeros((8, 8), bool)
        assert fe.occlusion_ratio(fe.OcclusionMask(occ), uniform_flow(8, 8, 0, 0),
                                  subject_mag_cutoff=1.0) == 0.0

    def test_occluded_pixels_above_cutoff_ignored(self):
        # all occluded pixels are fast movers, so the background ratio is 0
        u = np.zeros((8, 8), np.float32)
        u[:2] = 10.0
        occ = np.zeros((8, 8), bool)
        occ[:2] = True
        flow = fe.FlowField(u, np.zeros_like(u))
        assert fe.occlusion_ratio(fe.OcclusionMask(occ), flow,
                                  subject_mag_cutoff=5.0) == 0.0

    def test_empty_background_set(self):
        flow = uniform_flow(8, 8, 9.0, 0.0)
        occ = np.ones((8, 8), bool)
        assert fe.occlusion_ratio(fe.OcclusionMask(occ), flow,
                                  subject_mag_cutoff=1.0) == 0.0

    def test_monotone_in_occluded_count(self):
        flow = uniform_flow(10, 10, 0.0, 0.0)
        previous = -1.0
        occ = np.zeros((10, 10), bool)
        for k in range(0, 10):
            occ[k] = True
            ratio = fe.occlusion_ratio(fe.OcclusionMask(occ), flow, 1.0)
            assert ratio >= previous
            previous = ratio

    def test_default_cutoff(self):
        stats = fe.FlowStats(mean_mag=2.0, p50_mag=1.5, p95_mag=4.0, valid_fraction=1.0)
        assert fe.default_subject_cutoff(stats) == 3.0


class TestImageIO:
    def test_png_round_trip(self, tmp_path):
        src, _ = make_textured_pair(32, 0, 0, seed=30)
        path = tmp_path / "img.png"
        fe.save_image(src, path)
        loaded = fe.load_image(path)
        assert loaded.pixels.shape == (32, 32)
        assert np.abs(loaded.pixels - src.pixels).max() <= 1.0 / 255.0 + 1e-6

    def test_mask_export(self, tmp_path):
        occ = np.zeros((8, 8), bool)
        occ[2:4, 2:6] = True
        path = tmp_path / "mask.png"
        fe.save_mask_png(fe.OcclusionMask(occ), path)
        reloaded = fe.load_image(path)
        assert set(np.unique(np.round(reloaded.pixels * 255))) == {0.0, 255.0}

    def test_image_validation(self):
        with pytest.raises(ValueError):
            fe.Image(np.full((4, 4), 2.0, np.float32))
        with pytest.raises(ValueError):
            fe.Image(np.zeros((4, 4, 2), np.float32))
