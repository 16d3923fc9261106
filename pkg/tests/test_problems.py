import math

import numpy as np
import pytest

from svano.problems import (
    MIFFLIN2_FSTAR_50,
    NAMES,
    REFERENCE_F0_50,
    ProblemError,
    finite_difference_check,
    get_problem,
    matches_reference,
    registry,
    sample_differentiable,
)

# f(x0) worked out by hand for small n
SMALL_N_F0 = [
    ("maxq", 4, 16.0),                         # x0 = (1, 2, -3, -4)
    ("mxhilb", 2, 1.5),                        # 1 + 1/2
    ("chained lq", 2, 1.0),                    # max(1, 1 + 1/2 - 1)
    ("chained cb3 1", 2, 20.0),                # max(16 + 4, 0, 2)
    ("chained cb3 2", 3, 40.0),                # two terms of 20
    ("active faces", 2, math.log(3.0)),        # ln(|-2| + 1)
    ("brown function 2", 2, 2.0),              # 1 + 1
    ("chained mifflin 2", 2, 4.75),            # 1 + 2 + 1.75
    ("chained crescent 1", 3, 12.0),           # 4.25 + 7.75
    ("chained crescent 2", 3, 12.0),
]


class TestRegistry:
    def test_names(self):
        assert len(NAMES) == 10
        assert [p.name for p in registry(5)] == list(NAMES)

    def test_unknown(self):
        with pytest.raises(ProblemError):
            get_problem("rosenbrock")

    def test_too_small(self):
        with pytest.raises(ProblemError):
            get_problem("maxq", 1)

    def test_shape_checked(self):
        with pytest.raises(ProblemError):
            get_problem("maxq", 4).evaluate(np.zeros(3))

    def test_convexity_flags(self):
        convex = {p.name for p in registry() if p.convex}
        assert convex == set(NAMES[:5])


class TestValues:
    @pytest.mark.parametrize("name,n,expected", SMALL_N_F0)
    def test_small_n_start(self, name, n, expected):
        spec = get_problem(name, n)
        assert spec.evaluate(spec.starting_point()) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("name", NAMES)
    def test_reference_start_values(self, name):
        spec = get_problem(name, 50)
        assert matches_reference(spec.evaluate(spec.starting_point()), REFERENCE_F0_50[name])

    def test_decimal_comparison(self):
        assert matches_reference(232.75, 232.8)
        assert not matches_reference(232.74, 232.8)

    @pytest.mark.parametrize("name,x,fstar", [
        ("maxq", np.zeros(6), 0.0),
        ("mxhilb", np.zeros(6), 0.0),
        ("chained lq", np.full(6, 1.0 / math.sqrt(2.0)), -5.0 * math.sqrt(2.0)),
        ("chained cb3 1", np.ones(6), 10.0),
        ("chained cb3 2", np.ones(6), 10.0),
        ("active faces", np.zeros(6), 0.0),
        ("brown function 2", np.zeros(6), 0.0),
        ("chained crescent 1", np.zeros(6), 0.0),
        ("chained crescent 2", np.zeros(6), 0.0),
    ])
    def test_known_minimizers(self, name, x, fstar):
        spec = get_problem(name, 6)
        assert spec.evaluate(x) == pytest.approx(fstar, abs=1e-12)
        assert spec.f_star == pytest.approx(fstar)

    def test_mifflin_reference_minimum(self):
        assert get_problem("chained mifflin 2", 50).f_star == MIFFLIN2_FSTAR_50
        assert get_problem("chained mifflin 2", 10).f_star is None


class TestSubgradients:
    @pytest.mark.parametrize("name", NAMES)
    def test_finite_differences(self, name):
        spec = get_problem(name, 50)
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = sample_differentiable(spec, rng)
            assert finite_difference_check(spec, x, rng=rng) <= 1e-5

    def test_maxq_gradient(self):
        spec = get_problem("maxq", 3)
        np.testing.assert_array_equal(spec.subgradient(np.array([1.0, -3.0, 2.0])), [0, -6.0, 0])

    def test_kink_gap_zero_on_tie(self):
        spec = get_problem("maxq", 3)
        assert spec.kink_gap(np.array([1.0, -1.0, 0.0])) == 0.0
        assert spec.kink_gap(np.array([1.0, 2.0, 0.0])) > 0.0
