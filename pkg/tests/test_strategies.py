import math
from dataclasses import dataclass

import numpy as np
import pytest

from svano.strategies import (
    BundleConfig,
    BundleStrategy,
    LineSearchParams,
    Oracle,
    RadiusPolicy,
    SamplingConfig,
    SamplingStrategy,
    StepKind,
    bfgs_step,
    bundle_step_convex,
    bundle_step_nonconvex,
    gs_step,
    radius_update,
    sufficient_reduction,
    weak_wolfe_search,
)
from svano.problems import get_problem
from svano.subproblem import TrustRegion


@dataclass
class Toy:
    """Minimal problem object for the oracle wrapper."""

    f_fn: object
    g_fn: object
    dim: int
    gap_fn: object = None

    def evaluate(self, x):
        return float(self.f_fn(np.asarray(x, dtype=float)))

    def subgradient(self, x):
        return np.asarray(self.g_fn(np.asarray(x, dtype=float)), dtype=float)

    def kink_gap(self, x):
        return 1.0 if self.gap_fn is None else self.gap_fn(x)


def quadratic(n, scale=None):
    d = np.arange(1.0, n + 1.0) if scale is None else scale
    return Toy(lambda x: 0.5 * float(x @ (d * x)), lambda x: d * x, n)


def inf_norm(n):
    def g(x):
        i = int(np.argmax(np.abs(x)))
        out = np.zeros(n)
        out[i] = math.copysign(1.0, x[i])
        return out

    def gap(x):
        a = np.sort(np.abs(x))
        return a[-1] - a[-2]
    return Toy(lambda x: float(np.max(np.abs(x))), g, n, gap)


def abs_sum(n):
    return Toy(lambda x: float(np.sum(np.abs(x))), np.sign, n,
               lambda x: float(np.min(np.abs(x))))


class TestRadiusUpdate:
    def test_shrinks_when_all_fit(self):
        assert radius_update(RadiusPolicy(delta=1.0, tau=0.5), 0.5, 1.0, 0.2) == 0.5

    def test_keeps_otherwise(self):
        assert radius_update(RadiusPolicy(delta=1.0, tau=0.5), 0.5, 1.5, 0.2) == 1.0

    def test_weights(self):
        p = RadiusPolicy(delta=1.0, tau=0.25, upsilon3=10.0)
        assert radius_update(p, 0.1, 0.1, 0.2) == 1.0

    @pytest.mark.parametrize("kw", [dict(delta=0.0), dict(tau=1.0), dict(upsilon1=0.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            RadiusPolicy(**kw)


class TestWeakWolfe:
    def test_unit_step_on_quadratic(self):
        # f = x^2/2 from x = 1 along d = -1: t = 1 reaches the minimum
        oracle = Oracle(quadratic(1, np.array([1.0])))
        res = weak_wolfe_search(oracle, np.array([1.0]), np.array([-1.0]), LineSearchParams())
        assert res.ok and res.t == 1.0 and res.f == 0.0

    def test_doubling(self):
        oracle = Oracle(quadratic(1, np.array([1.0])))
        res = weak_wolfe_search(oracle, np.array([1.0]), np.array([-1e-3]), LineSearchParams())
        assert res.ok and res.t > 1.0
        assert res.g @ np.array([-1e-3]) >= 0.9 * -1e-3 * 1.0

    def test_bisection(self):
        oracle = Oracle(quadratic(1, np.array([1.0])))
        res = weak_wolfe_search(oracle, np.array([1.0]), np.array([-10.0]), LineSearchParams())
        assert res.ok and res.t < 1.0
        assert res.f < 0.5

    def test_ascent_direction_fails(self):
        oracle = Oracle(quadratic(1, np.array([1.0])))
        res = weak_wolfe_search(oracle, np.array([1.0]), np.array([1.0]), LineSearchParams())
        assert not res.ok

    def test_zero_direction(self):
        with pytest.raises(ValueError):
            weak_wolfe_search(Oracle(quadratic(1)), np.ones(1), np.zeros(1), LineSearchParams())

    @pytest.mark.parametrize("kw", [dict(c1=0.9, c2=0.5), dict(alpha_min=0.0),
                                    dict(max_iters=0)])
    def test_params(self, kw):
        with pytest.raises(ValueError):
            LineSearchParams(**kw)


class TestBFGSStep:
    def test_identity_metric_on_quadratic(self):
        oracle = Oracle(quadratic(1, np.array([1.0])))
        x = np.array([2.0])
        out = bfgs_step(oracle, x, 2.0, np.array([2.0]), np.eye(1), 1e-15)
        assert out.kind is StepKind.SERIOUS
        np.testing.assert_allclose(out.x_plus, [0.0])
        # G w = g_k and gamma = (t - 1) g_k, so s = -W (G w + gamma)
        np.testing.assert_allclose(out.s, -(out.G_omega + out.gamma))

    def test_breakdown_at_kink(self):
        # from 0 the only direction is uphill on |x|
        oracle = Oracle(abs_sum(1))
        out = bfgs_step(oracle, np.array([0.0]), 0.0, np.array([1.0]), np.eye(1), 1e-15)
        assert out.kind is StepKind.BREAKDOWN
        assert not np.any(out.s)


class TestBundleStep:
    def test_convex_serious(self):
        oracle = Oracle(abs_sum(3))
        x = np.array([1.0, -2.0, 0.5])
        out = bundle_step_convex(oracle, x, 3.5, np.sign(x), np.eye(3), TrustRegion(0.1), 1e-15)
        assert out.kind is StepKind.SERIOUS
        assert out.f_plus < 3.5
        assert sufficient_reduction(3.5, out.f_plus, out.d, np.eye(3), 1e-15, out.s)
        assert np.max(np.abs(out.s)) <= 0.1 * (1 + 1e-12)

    def test_nonconvex_null_at_minimizer(self):
        # at the minimizer every norm fits in the radius after a few cuts
        oracle = Oracle(abs_sum(2))
        x = np.zeros(2)
        out = bundle_step_nonconvex(oracle, x, 0.0, np.ones(2), np.eye(2), TrustRegion(1.0),
                                    1e-15, 1e-15, RadiusPolicy(delta=1.0))
        assert out.kind is StepKind.NULL
        assert out.shrink

    def test_carry_over_stays_in_box(self):
        strat = BundleStrategy()
        oracle = Oracle(abs_sum(3))
        x = np.array([1.0, -2.0, 0.5])
        out = strat.step(oracle, x, 3.5, np.sign(x), np.eye(3), 0.5)
        strat.carry_over(out.x_plus, 0.25)
        dist = np.max(np.abs(strat.carried.points - out.x_plus[None, :]), axis=1)
        assert np.all(dist <= 0.25)

    def test_uses_hessian_when_given(self):
        oracle = Oracle(abs_sum(3))
        x = np.array([1.0, -2.0, 0.5])
        W = np.diag([1.0, 2.0, 4.0])
        a = BundleStrategy().step(oracle, x, 3.5, np.sign(x), W, 0.1)
        b = BundleStrategy().step(oracle, x, 3.5, np.sign(x), W, 0.1, H_k=np.linalg.inv(W))
        np.testing.assert_allclose(a.s, b.s, atol=1e-10)

    def test_config_defaults(self):
        cfg = BundleConfig()
        assert cfg.null_budget > 0 and cfg.max_columns >= cfg.null_budget


class TestSamplingStep:
    def test_reduction_near_kink(self):
        # f = |x|_inf near a kink: every accepted step must satisfy the decrease test
        n = 4
        problem = inf_norm(n)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = np.array([1.0, 1.0 - 1e-3, 0.2, -0.3]) + 1e-4 * rng.standard_normal(n)
            oracle = Oracle(problem)
            f, g = oracle.f(x), oracle.g(x)
            out = gs_step(oracle, x, f, g, np.eye(n), TrustRegion(0.01),
                          SamplingConfig(rng_seed=seed), 1e-15)
            if out.kind is StepKind.SERIOUS:
                assert out.f_plus <= f + 0.5 * 1e-15 * float(out.d @ out.s)
                assert out.f_plus < f
            else:
                assert out.shrink and out.skip_update

    def test_sample_budget(self):
        n = 3
        oracle = Oracle(quadratic(n))
        strat = SamplingStrategy(config=SamplingConfig(sample_count=2, rng_seed=1))
        x = np.ones(n)
        strat.step(oracle, x, oracle.f(x), oracle.g(x), np.eye(n), 0.1)
        assert oracle.counters.grad == 1 + 2 + 1

    def test_default_count_is_2n(self):
        n = 3
        oracle = Oracle(quadratic(n))
        strat = SamplingStrategy(config=SamplingConfig(rng_seed=1))
        x = np.ones(n)
        strat.step(oracle, x, oracle.f(x), oracle.g(x), np.eye(n), 0.1)
        assert strat.points.shape[0] == 2 * n

    def test_samples_in_box(self):
        n = 5
        oracle = Oracle(quadratic(n))
        strat = SamplingStrategy(config=SamplingConfig(rng_seed=2))
        x = np.ones(n)
        strat.step(oracle, x, oracle.f(x), oracle.g(x), np.eye(n), 0.05)
        assert np.all(np.abs(strat.points - x) <= 0.05)

    def test_seeded(self):
        n = 3
        runs = []
        for _ in range(2):
            oracle = Oracle(inf_norm(n))
            x = np.array([1.0, 0.5, -0.2])
            out = gs_step(oracle, x, oracle.f(x), oracle.g(x), np.eye(n), TrustRegion(0.1),
                          SamplingConfig(rng_seed=4), 1e-15)
            runs.append(out.s)
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplingConfig(sample_count=0)
        with pytest.raises(ValueError):
            SamplingConfig(backtrack_factor=1.0)
        with pytest.raises(ValueError):
            SamplingConfig(probe_budget=-1)

    def test_old_iterate_retained(self):
        n = 3
        oracle = Oracle(abs_sum(n))
        strat = SamplingStrategy(config=SamplingConfig(rng_seed=0))
        x = np.array([1.0, -2.0, 0.5])
        out = strat.step(oracle, x, oracle.f(x), oracle.g(x), np.eye(n), 0.1)
        assert out.kind is StepKind.SERIOUS
        assert any(np.array_equal(p, x) for p in strat.probe_points)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_probe_cuts_rescue_conic_point(self, seed):
        # all cb3 pieces tie at x = 1; with one coordinate displaced, 2n random
        # samples miss a descent direction, while cuts from rejected trial points find one
        n = 20
        x = np.ones(n)
        x[n // 2] = 1.08
        kinds = []
        for budget in (0, 10):
            oracle = Oracle(get_problem("chained cb3 1", n))
            f = oracle.f(x)
            out = gs_step(oracle, x, f, oracle.g(x), np.eye(n), TrustRegion(0.05),
                          SamplingConfig(rng_seed=seed, probe_budget=budget), 1e-15)
            kinds.append(out.kind)
            if out.kind is StepKind.SERIOUS:
                assert out.f_plus < f
        assert kinds == [StepKind.NULL, StepKind.SERIOUS]

    def test_probes_obey_box(self):
        n = 4
        oracle = Oracle(inf_norm(n))
        strat = SamplingStrategy(config=SamplingConfig(rng_seed=3))
        x = np.array([1.0, 1.0 - 1e-3, 0.2, -0.3])
        strat.step(oracle, x, oracle.f(x), oracle.g(x), np.eye(n), 0.01)
        y = x + 0.5
        strat.step(oracle, y, oracle.f(y), oracle.g(y), np.eye(n), 0.01)
        assert np.all(np.max(np.abs(strat.probe_points - y), axis=1) <= 0.01)
