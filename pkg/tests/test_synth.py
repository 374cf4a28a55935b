import numpy as np
import pytest

from gsrefine.synth import (CorruptionSpec, apply_corruption, generate_scene)


class TestCorruptionSpec:
    def test_out_of_bounds_rect_rejected(self):
        spec = CorruptionSpec(view_indices=[1], rects=[(60, 0, 10, 10)])
        with pytest.raises(ValueError):
            spec.validate(64, 64, 4)

    def test_all_views_corrupted_rejected(self):
        spec = CorruptionSpec(view_indices=[0, 1], rects=[(0, 0, 2, 2)] * 2)
        with pytest.raises(ValueError):
            spec.validate(64, 64, 2)


class TestApplyCorruption:
    def test_masks_match_rects_and_rest_untouched(self):
        rng = np.random.default_rng(0)
        frames = [rng.uniform(0, 1, (16, 16, 3)) for _ in range(3)]
        spec = CorruptionSpec(view_indices=[1], rects=[(2, 3, 5, 4)])
        out, masks = apply_corruption(frames, spec, rng)
        assert masks[1].sum() == 20
        np.testing.assert_array_equal(out[0], frames[0])
        np.testing.assert_array_equal(out[1][~masks[1]], frames[1][~masks[1]])
        assert np.any(out[1][masks[1]] != frames[1][masks[1]])

    def test_shuffle_mode_permutes_pixels(self):
        rng = np.random.default_rng(1)
        frames = [np.arange(16 * 16 * 3, dtype=np.float64).reshape(16, 16, 3) / 768]
        spec = CorruptionSpec(view_indices=[0], rects=[(0, 0, 8, 8)],
                              mode="shuffle")
        out, masks = apply_corruption(frames, spec, rng)
        before = np.sort(frames[0][masks[0]].reshape(-1))
        after = np.sort(out[0][masks[0]].reshape(-1))
        np.testing.assert_array_equal(before, after)  # same multiset of pixels
        assert np.any(out[0][masks[0]] != frames[0][masks[0]])


class TestGenerateScene:
    def test_same_seed_identical(self):
        a = generate_scene(3, n_splats=60, n_views=4, width=24, height=24,
                           n_corrupted=1)
        b = generate_scene(3, n_splats=60, n_views=4, width=24, height=24,
                           n_corrupted=1)
        np.testing.assert_array_equal(a.field.mu, b.field.mu)
        for fa, fb in zip(a.corrupted_frames, b.corrupted_frames):
            np.testing.assert_array_equal(fa, fb)

    def test_zero_corruption_equals_gt(self):
        scene = generate_scene(4, n_splats=60, n_views=4, width=24, height=24,
                               n_corrupted=0)
        for c, g in zip(scene.corrupted_frames, scene.gt_frames):
            np.testing.assert_array_equal(c, g)

    def test_corrupted_views_exclude_reference(self):
        scene = generate_scene(5, n_splats=60, n_views=6, width=24, height=24,
                               n_corrupted=3)
        assert 0 not in scene.corruption.view_indices
        assert len(scene.corruption.view_indices) == 3

    def test_corruption_area_near_fraction(self):
        scene = generate_scene(6, n_splats=60, n_views=6, width=32, height=32,
                               n_corrupted=2, corruption_fraction=0.10)
        for vi in scene.corruption.view_indices:
            frac = scene.corruption_masks[vi].mean()
            assert 0.07 <= frac <= 0.13

    def test_depth_sentinel_on_empty_pixels(self):
        scene = generate_scene(7, n_splats=40, n_views=3, width=24, height=24,
                               n_corrupted=0)
        d = scene.gt_depths[0]
        assert np.isfinite(d).any()
        finite = d[np.isfinite(d)]
        assert finite.max() < 10.0  # surfaces, not the far background plane
