import numpy as np
import pytest

from gsrefine import imgio
from gsrefine.density import GradStats, density_control, init_field_from_points
from gsrefine.field import SplatField, logit
from gsrefine.metrics import PSNR_CAP, depth_pearson, mask_iou, psnr


class TestPsnr:
    def test_identical_images_capped(self):
        a = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        assert psnr(a, a) == PSNR_CAP

    def test_known_value(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.5)
        assert psnr(a, b) == pytest.approx(10 * np.log10(1 / 0.25), abs=1e-9)

    def test_mask_restricts_region(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        b[0, 0] = 1.0
        m = np.zeros((4, 4), dtype=bool)
        m[1:, 1:] = True
        assert psnr(a, b, mask=m) == PSNR_CAP  # error is outside the mask
        assert psnr(a, b) < PSNR_CAP


class TestMaskIou:
    def test_exact_set_arithmetic(self):
        a = np.zeros((5, 5), dtype=bool); a[1:4, 1:4] = True   # 9 px
        b = np.zeros((5, 5), dtype=bool); b[2:5, 2:5] = True   # 9 px, overlap 4
        assert mask_iou(a, b) == pytest.approx(4 / 14)

    def test_both_empty_is_one(self):
        z = np.zeros((3, 3), dtype=bool)
        assert mask_iou(z, z) == 1.0

    def test_disjoint_is_zero(self):
        a = np.zeros((3, 3), dtype=bool); a[0, 0] = True
        b = np.zeros((3, 3), dtype=bool); b[2, 2] = True
        assert mask_iou(a, b) == 0.0


class TestDepthPearson:
    def test_perfect_correlation(self):
        d = np.random.default_rng(1).uniform(1, 5, (6, 6))
        r, flag = depth_pearson(d, 2 * d + 1)
        assert r == pytest.approx(1.0) and not flag

    def test_sentinels_excluded(self):
        d = np.random.default_rng(2).uniform(1, 5, (6, 6))
        ref = d.copy()
        ref[0, 0] = np.inf     # ignored pixel
        d2 = d.copy()
        d2[0, 0] = 99.0
        r, _ = depth_pearson(d2, ref)
        assert r == pytest.approx(1.0)

    def test_constant_depth_flagged(self):
        r, flag = depth_pearson(np.ones((4, 4)),
                                np.random.default_rng(3).uniform(1, 2, (4, 4)))
        assert r == 0.0 and flag


class TestImageIO:
    def test_rgb_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, (9, 7, 3))
        p = tmp_path / "img.png"
        imgio.save_rgb(p, img)
        back = imgio.load_rgb(p)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_rgb_8bit_values_exact(self, tmp_path):
        img = np.round(np.random.default_rng(5).uniform(0, 1, (5, 5, 3)) * 255) / 255
        p = tmp_path / "img.png"
        imgio.save_rgb(p, img)
        np.testing.assert_array_equal(imgio.load_rgb(p), img)

    def test_mask_round_trip(self, tmp_path):
        m = np.random.default_rng(6).uniform(size=(8, 8)) < 0.3
        p = tmp_path / "m.png"
        imgio.save_mask(p, m)
        np.testing.assert_array_equal(imgio.load_mask(p), m)

    def test_depth_round_trip_with_sentinel(self, tmp_path):
        d = np.random.default_rng(7).uniform(0.5, 50.0, (8, 8))
        d[0, 0] = np.inf
        p = tmp_path / "d.png"
        imgio.save_depth(p, d, scale=0.002)
        back = imgio.load_depth(p, scale=0.002)
        assert np.isinf(back[0, 0])
        finite = np.isfinite(d)
        np.testing.assert_allclose(back[finite], d[finite], atol=0.002)


def tiny_field(n, opacity=0.9, scale=0.02):
    rng = np.random.default_rng(0)
    return SplatField(mu=rng.normal(0, 1, (n, 3)),
                      log_scale=np.full((n, 3), np.log(scale)),
                      quat=np.tile([1.0, 0, 0, 0], (n, 1)),
                      opacity_logit=np.full(n, float(logit(opacity))),
                      color=rng.uniform(0, 1, (n, 3)),
                      background=np.zeros(3))


class TestDensityControl:
    def test_prune_low_opacity(self):
        f = tiny_field(5)
        f.opacity_logit[2] = float(logit(0.001))
        new, keep = density_control(f, np.zeros(5), np.random.default_rng(0))
        assert len(new) == 4
        np.testing.assert_array_equal(keep, [True, True, False, True, True])

    def test_clone_small_high_gradient(self):
        f = tiny_field(4, scale=0.01)
        g = np.zeros(4)
        g[1] = 1.0
        new, keep = density_control(f, g, np.random.default_rng(0))
        assert len(new) == 5
        np.testing.assert_array_equal(new.mu[4], f.mu[1])  # clone at same spot

    def test_split_large_high_gradient_shrinks(self):
        f = tiny_field(3, scale=0.2)
        g = np.zeros(3)
        g[0] = 1.0
        new, keep = density_control(f, g, np.random.default_rng(0))
        assert len(new) == 4
        want = np.log(0.2) - np.log(1.6)
        assert new.log_scale[0, 0] == pytest.approx(want)
        assert new.log_scale[3, 0] == pytest.approx(want)

    def test_max_splats_blocks_growth(self):
        f = tiny_field(4, scale=0.01)
        new, _ = density_control(f, np.ones(4), np.random.default_rng(0),
                                 max_splats=4)
        assert len(new) == 4


class TestInitFromPoints:
    def test_scales_follow_neighbor_distance(self):
        pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [5.0, 0, 0],
                        [5.1, 0, 0]])
        cols = np.full((5, 3), 0.5)
        f = init_field_from_points(pts, cols, background=np.zeros(3))
        assert len(f) == 5
        assert np.exp(f.log_scale).max() < 1.0
        np.testing.assert_array_equal(f.mu, pts)

    def test_subsampling_respects_cap(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(100, 3))
        f = init_field_from_points(pts, np.full((100, 3), 0.5),
                                   background=np.zeros(3), max_splats=30,
                                   rng=rng)
        assert len(f) == 30

    def test_colors_clipped_into_open_interval(self):
        pts = np.zeros((2, 3))
        cols = np.array([[0.0, 0.5, 1.0], [1.0, 0.0, 0.5]])
        f = init_field_from_points(pts, cols, background=np.zeros(3))
        assert np.all(f.color > 0) and np.all(f.color < 1)
