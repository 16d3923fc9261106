import math

import numpy as np
import pytest

from svano.metric import (
    DampingParams,
    DegenerateStepError,
    Metric,
    MetricError,
    compute_damping,
    correction_diagnostics,
    psi,
    psi_growth_bound,
    satisfies_bounds,
    update_hessian,
    update_inverse,
    usable_hessian,
)


def random_pair(rng, n):
    s = rng.standard_normal(n)
    y = rng.standard_normal(n) * rng.choice([1e-3, 1.0, 30.0])
    return s, y


class TestDampingParams:
    def test_defaults(self):
        p = DampingParams()
        assert p.eta == 1e-12 and p.theta == 20.0

    @pytest.mark.parametrize("kw", [dict(eta=0.0), dict(eta=2.0), dict(theta=0.5),
                                    dict(theta=-1.0)])
    def test_rejects_bad_ranges(self, kw):
        with pytest.raises(ValueError):
            DampingParams(**kw)

    def test_matrix_h_bar_bounds(self):
        p = DampingParams(eta=0.5, theta=3.0, h_bar=np.diag([0.5, 3.0]))
        assert p.h_bar_eigen_bounds() == pytest.approx((0.5, 3.0))
        with pytest.raises(ValueError):
            DampingParams(eta=0.6, theta=3.0, h_bar=np.diag([0.5, 3.0]))

    def test_growth_bound(self):
        p = DampingParams(eta=1e-12, theta=20.0)
        assert psi_growth_bound(p) == pytest.approx(19.0 + 12.0 * math.log(10.0))


class TestComputeDamping:
    def test_good_pair_needs_no_damping(self):
        s = np.array([1.0, 0.0, 0.0])
        y = np.array([2.0, 0.5, 0.0])
        pair = compute_damping(s, y, DampingParams())
        assert pair.beta == 0.0
        np.testing.assert_array_equal(pair.v, y)

    def test_zero_y_gets_eta(self):
        # v = beta s, so s'v/|s|^2 = beta must reach eta
        s = np.array([0.3, -0.4])
        pair = compute_damping(s, np.zeros(2), DampingParams(eta=1e-12))
        assert pair.beta == pytest.approx(1e-12, rel=1e-6)

    def test_negative_curvature(self):
        # y = -s: s'v = (2 beta - 1)|s|^2 = eta |s|^2
        s = np.array([1.0, 2.0])
        eta = 1e-3
        pair = compute_damping(s, -s, DampingParams(eta=eta))
        assert pair.beta == pytest.approx((1.0 + eta) / 2.0, rel=1e-10)

    def test_theta_bound_active(self):
        # y = 100 s: v = (100 - 99 beta) s and |v|^2/s'v = 100 - 99 beta = theta
        s = np.array([0.5, -1.0, 2.0])
        pair = compute_damping(s, 100.0 * s, DampingParams(theta=20.0))
        assert pair.beta == pytest.approx(80.0 / 99.0, rel=1e-10)

    def test_theta_inf_leaves_large_curvature(self):
        s = np.array([0.5, -1.0, 2.0])
        pair = compute_damping(s, 100.0 * s, DampingParams(theta=math.inf))
        assert pair.beta == 0.0

    def test_degenerate_step(self):
        with pytest.raises(DegenerateStepError):
            compute_damping(np.zeros(3), np.ones(3), DampingParams())

    def test_bounds_and_minimality_random(self):
        rng = np.random.default_rng(7)
        params = DampingParams(eta=1e-4, theta=20.0)
        for _ in range(2000):
            s, y = random_pair(rng, int(rng.integers(1, 8)))
            pair = compute_damping(s, y, params)
            assert 0.0 <= pair.beta <= 1.0
            assert satisfies_bounds(s, pair.v, params)
            if pair.beta > 1e-9:
                lower = pair.beta - 1e-9
                v = lower * s + (1.0 - lower) * y
                assert not satisfies_bounds(s, v, params)


class TestUpdates:
    def test_secant_equations(self):
        rng = np.random.default_rng(3)
        n = 6
        B = rng.standard_normal((n, n))
        H = B @ B.T + np.eye(n)
        W = np.linalg.inv(H)
        s, y = random_pair(rng, n)
        pair = compute_damping(s, y, DampingParams())
        W1 = update_inverse(W, pair)
        H1 = update_hessian(H, pair)
        np.testing.assert_allclose(W1 @ pair.v, s, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(H1 @ s, pair.v, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(W1 @ H1, np.eye(n), atol=1e-8)

    def test_rejects_nonpositive_curvature(self):
        from svano.metric import CurvaturePair
        s = np.array([1.0, 0.0])
        pair = CurvaturePair(s=s, y=-s, v=-s, beta=0.0)
        with pytest.raises(MetricError):
            update_inverse(np.eye(2), pair)

    def test_metric_skips_zero_step(self):
        m = Metric.identity(3)
        assert m.update(np.zeros(3), np.ones(3), DampingParams()) is None
        assert m.skipped == 1 and m.updates == 0
        np.testing.assert_array_equal(m.W, np.eye(3))

    def test_metric_skips_when_h_lost_definiteness(self):
        # H indefinite along s can only come from rounding; the pair is skipped whole
        m = Metric.identity(2)
        m.H = np.diag([1.0, -1.0])
        W_before = m.W.copy()
        assert m.update(np.array([0.0, 1.0]), np.array([0.0, 1.0]), DampingParams()) is None
        assert m.skipped == 1 and m.updates == 0
        np.testing.assert_array_equal(m.W, W_before)

    def test_metric_skips_when_update_leaves_h_indefinite(self):
        # positive along s but not elsewhere: the update cannot repair that
        m = Metric.identity(2)
        m.H = np.diag([1.0, -1e-3])
        W_before = m.W.copy()
        assert m.update(np.array([1.0, 0.0]), np.array([2.0, 0.0]), DampingParams()) is None
        assert m.skipped == 1 and m.updates == 0
        np.testing.assert_array_equal(m.W, W_before)

    def test_metric_skips_overflowing_update(self):
        m = Metric(W=np.diag([1e308, 1.0]))
        params = DampingParams(theta=math.inf)
        assert m.update(np.array([1.0, 0.0]), np.array([1e-6, 0.0]), params) is None
        assert m.skipped == 1
        np.testing.assert_array_equal(m.W, np.diag([1e308, 1.0]))

    def test_usable_hessian_tolerance(self):
        assert usable_hessian(np.diag([1.0, 1e-12]))
        assert usable_hessian(np.diag([1.0, -1e-11]))
        assert not usable_hessian(np.diag([1.0, -1e-9]))
        assert not usable_hessian(-np.eye(2))
        assert not usable_hessian(np.diag([1.0, np.inf]))

    def test_metric_tracks_both(self):
        rng = np.random.default_rng(11)
        m = Metric.identity(4)
        # a short sequence: longer ones may compound to cond(H) ~ 1e15, where
        # W H = I is no longer representable
        for _ in range(5):
            s, y = random_pair(rng, 4)
            m.update(s, y, DampingParams(eta=1e-2))
        np.testing.assert_allclose(m.W @ m.H, np.eye(4), atol=1e-8)
        assert m.updates == 5

    def test_psi_growth_bound_holds(self):
        rng = np.random.default_rng(5)
        params = DampingParams()
        m = Metric.identity(5)
        for _ in range(200):
            s, y = random_pair(rng, 5)
            before = psi(m.H)
            m.update(s, y, params)
            try:
                after = psi(m.H)
            except MetricError:
                break
            assert after <= before + psi_growth_bound(params) + 1e-8


class TestPsi:
    def test_identity(self):
        assert psi(np.eye(7)) == pytest.approx(7.0)

    def test_diagonal(self):
        d = np.array([0.5, 2.0, 4.0])
        assert psi(np.diag(d)) == pytest.approx(d.sum() - np.log(d).sum())

    def test_indefinite(self):
        with pytest.raises(MetricError):
            psi(np.diag([1.0, -1.0]))

    def test_diagnostics(self):
        rec = correction_diagnostics(np.diag([1.0, 4.0]), np.array([0.0, 2.0]))
        assert rec.cos_phi == pytest.approx(1.0)
        assert rec.iota == pytest.approx(4.0)
