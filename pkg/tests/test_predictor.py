import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsrefine import predictor as pred


def rand_maps(rng, h=12, w=12):
    render = rng.uniform(0, 1, (h, w, 3))
    target = rng.uniform(0, 1, (h, w, 3))
    return render, target


class TestQuantile:
    def test_percentile_below_reading(self):
        vals = np.array([5.0, 1.0, 3.0, 2.0, 4.0])
        # tau=0.6 -> threshold at sorted index ceil(0.6*5)-1 = 2 -> value 3
        assert pred.quantile_threshold(vals, 0.6) == 3.0
        assert pred.quantile_threshold(vals, 1.0) == 5.0

    def test_cardinality_within_one_over_n(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(5, 400))
            vals = rng.permutation(n).astype(np.float64)  # distinct values
            tau = float(rng.uniform(0.05, 1.0))
            rho = pred.quantile_threshold(vals, tau)
            frac = np.mean(vals <= rho)
            assert abs(frac - tau) <= 1.0 / n + 1e-12

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            vals = rng.normal(size=int(rng.integers(4, 100)))
            taus = np.sort(rng.uniform(0.05, 1.0, 4))
            rhos = [pred.quantile_threshold(vals, t) for t in taus]
            assert all(b >= a for a, b in zip(rhos, rhos[1:]))


class TestDilation:
    def brute(self, mask):
        h, w = mask.shape
        out = np.zeros_like(mask)
        for y in range(h):
            for x in range(w):
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
                            out[y, x] = True
        return out

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            mask = rng.uniform(size=(9, 11)) < 0.15
            np.testing.assert_array_equal(pred.dilate3(mask), self.brute(mask))


class TestResidualMask:
    def test_strict_threshold_then_dilate(self):
        r = np.zeros((5, 5))
        r[2, 2] = 1.0
        m = pred.residual_mask(r, tau=0.9)
        want = np.zeros((5, 5), dtype=bool)
        want[1:4, 1:4] = True
        np.testing.assert_array_equal(m, want)

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            r = rng.normal(size=(8, 8))
            m_hi = pred.residual_mask(r, 0.9)
            m_lo = pred.residual_mask(r, 0.6)
            assert np.array_equal(m_hi & m_lo, m_hi)  # higher tau is a subset


class TestBounds:
    def test_upper_never_exceeds_lower(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            r = rng.normal(size=(10, 10))
            lo = float(rng.uniform(0.5, 0.9))
            hi = float(rng.uniform(lo, 0.99))
            u, low = pred.compute_bounds(r, lo, hi)
            assert np.all(u <= low)


class TestLossOracles:
    def losses_brute(self, h_map, upper, lower, m_prior, r_norm):
        h, w = h_map.shape
        sup = prior = disc = 0.0
        for y in range(h):
            for x in range(w):
                sup += (max(0.0, upper[y, x] - h_map[y, x])
                        + max(0.0, h_map[y, x] - lower[y, x]))
                prior += max(0.0, m_prior[y, x] - h_map[y, x])
                disc -= m_prior[y, x] * (1.0 - h_map[y, x]) * r_norm[y, x]
        n = h * w
        return sup / n, prior / n, disc / n

    def test_match_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            hm = rng.uniform(0, 1, (6, 7))
            u = rng.uniform(0, 1, (6, 7))
            l = np.maximum(u, rng.uniform(0, 1, (6, 7)))
            mp = (rng.uniform(size=(6, 7)) < 0.4).astype(np.float64)
            rn = rng.uniform(0, 1, (6, 7))
            s_b, p_b, d_b = self.losses_brute(hm, u, l, mp, rn)
            assert pred.supervision_loss(hm, u, l) == pytest.approx(s_b, abs=1e-12)
            assert pred.prior_loss(hm, mp) == pytest.approx(p_b, abs=1e-12)
            assert pred.discard_loss(hm, mp, rn) == pytest.approx(d_b, abs=1e-12)
            total = pred.mask_loss(hm, u, l, mp, rn, lambda_prior=0.7,
                                   lambda_discard=0.3)
            assert total == pytest.approx(s_b + 0.7 * p_b + 0.3 * d_b, abs=1e-12)


class TestMaskLossGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        for trial in range(5):
            render, target = rand_maps(rng)
            feats = pred.build_features(render, target)
            phi = pred.init_predictor((6, trial))
            r = pred.residual_map(render, target)
            u, low = pred.compute_bounds(r, 0.7, 0.95)
            mp = rng.uniform(size=r.shape) < 0.3
            rn = r / max(r.max(), 1e-12)

            def loss_at(phi_):
                hm = pred.predict(feats, phi_).reshape(r.shape)
                return pred.mask_loss(hm, u, low, mp, rn, 1.0, 0.1)

            loss, gw, gb = pred.mask_loss_gradients(feats, phi, u, low, mp, rn,
                                                    1.0, 0.1)
            assert loss == pytest.approx(loss_at(phi), abs=1e-12)
            h = 1e-6
            for j in range(len(phi.weights)):
                p1 = phi.copy(); p1.weights[j] += h
                p2 = phi.copy(); p2.weights[j] -= h
                fd = (loss_at(p1) - loss_at(p2)) / (2 * h)
                denom = max(abs(fd), abs(gw[j]), 1e-8)
                assert abs(fd - gw[j]) / denom < 1e-4, f"weight {j}"
            p1 = phi.copy(); p1.bias += h
            p2 = phi.copy(); p2.bias -= h
            fd = (loss_at(p1) - loss_at(p2)) / (2 * h)
            assert abs(fd - gb) / max(abs(fd), abs(gb), 1e-8) < 1e-4


class TestAnnealing:
    def test_endpoints_exact(self):
        assert pred.anneal_tau_low(0, 1000) == 0.7
        assert pred.anneal_tau_low(1000, 1000) == 0.85

    def test_linear_midpoint(self):
        assert pred.anneal_tau_low(500, 1000) == pytest.approx(0.775)

    @given(st.integers(1, 10000), st.integers(0, 10000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_and_bounded(self, total, it):
        it = min(it, total)
        v = pred.anneal_tau_low(it, total)
        assert 0.7 <= v <= 0.85


class TestLifecycle:
    def test_reset_is_seeded_reinit(self):
        phi = pred.init_predictor(42)
        phi.weights[:] = 99.0
        again = pred.reset(phi, 42)
        np.testing.assert_array_equal(again.weights, pred.init_predictor(42).weights)

    def test_predict_rejects_bad_feature_dim(self):
        phi = pred.init_predictor(0)
        with pytest.raises(ValueError):
            pred.predict(np.zeros((10, pred.FEATURE_DIM + 1)), phi)

    def test_save_load_round_trip(self, tmp_path):
        phi = pred.init_predictor(7)
        p = tmp_path / "phi.txt"
        pred.save_predictor(p, phi)
        q = pred.load_predictor(p)
        np.testing.assert_array_equal(phi.weights, q.weights)
        assert phi.bias == q.bias

    def test_features_standardized(self):
        rng = np.random.default_rng(8)
        render, target = rand_maps(rng)
        f = pred.build_features(render, target)
        assert f.shape == (12, 12, pred.FEATURE_DIM)
        np.testing.assert_allclose(f.mean(axis=(0, 1)), 0.0, atol=1e-10)
        np.testing.assert_allclose(f.std(axis=(0, 1)), 1.0, atol=1e-10)
