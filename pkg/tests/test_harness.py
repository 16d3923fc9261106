import json
import math

import numpy as np
import pytest

from svano import Exit, FrameworkParams, Limits, check_termination, run
from svano.harness import ConfigError, diagnostics_report
from svano.problems import get_problem
from svano.strategies import RadiusPolicy


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.0), dict(r=0.0),
                                    dict(eta=0.0), dict(theta=0.5)])
    def test_bad_params(self, kw):
        with pytest.raises(ConfigError):
            FrameworkParams(**kw)

    def test_theta_inf_allowed(self):
        assert FrameworkParams(theta=math.inf).damping().theta == math.inf

    def test_bad_limits(self):
        with pytest.raises(ConfigError):
            Limits(max_iter=0)

    def test_unknown_problem(self):
        with pytest.raises(ConfigError):
            run("nope", "bundle")

    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError):
            run("maxq", "newton", n=4)


class TestTermination:
    def test_needs_both(self):
        assert check_termination(1e-4, 1e-4)
        assert check_termination(9.77e-4, 9.77e-5)
        assert not check_termination(1e-2, 9.77e-5)
        assert not check_termination(0.0, 2e-4)


@pytest.mark.parametrize("algorithm", ["bfgs", "bundle", "gs"])
class TestSoundness:
    """Per-step invariants, asserted inside the loop by ``verify``."""

    @pytest.mark.parametrize("name", ["maxq", "chained lq", "active faces",
                                      "chained crescent 1"])
    def test_invariants(self, algorithm, name):
        rec = run(name, algorithm, n=10, verify=True, trace=True,
                  limits=Limits(max_iter=300))
        assert rec.exit is not Exit.FAILURE, rec.message
        fs = [t.f for t in rec.trace]
        assert all(b <= a for a, b in zip(fs, fs[1:]))
        deltas = [t.delta for t in rec.trace]
        assert all(b <= a for a, b in zip(deltas, deltas[1:]))
        assert all(t.sufficient for t in rec.trace if t.kind == "serious")

    def test_deterministic(self, algorithm):
        a = run("chained cb3 2", algorithm, n=8, seed=3, limits=Limits(max_iter=200))
        b = run("chained cb3 2", algorithm, n=8, seed=3, limits=Limits(max_iter=200))
        assert a.metric_hash == b.metric_hash
        assert a.x_end.tobytes() == b.x_end.tobytes()
        assert a.row() == b.row()


class TestRun:
    def test_bundle_solves_small_maxq(self):
        rec = run("maxq", "bundle", n=10)
        assert rec.exit is Exit.STATIONARY
        assert rec.f_end == pytest.approx(0.0, abs=1e-3)
        assert rec.delta_end == pytest.approx(0.1 * 0.5 ** 10)

    def test_iteration_limit(self):
        rec = run("maxq", "bundle", n=10, limits=Limits(max_iter=3))
        assert rec.exit is Exit.ITERATION and rec.iters == 3

    def test_counters_positive(self):
        rec = run("chained lq", "gs", n=6, limits=Limits(max_iter=20))
        assert rec.func_evals > 0 and rec.grad_evals > 0
        # gradient sampling may re-solve after a rejected step within one iteration
        assert rec.subproblem_solves >= rec.iters
        rec = run("chained lq", "bfgs", n=6, limits=Limits(max_iter=20))
        assert rec.subproblem_solves == rec.iters

    def test_initial_radius(self):
        rec = run("maxq", "bundle", n=6, policy=RadiusPolicy(delta=1.0), limits=Limits(max_iter=1))
        assert rec.delta_end <= 1.0

    def test_json_record(self):
        rec = run("maxq", "bfgs", n=6, trace=True, limits=Limits(max_iter=5))
        doc = json.loads(json.dumps(rec.to_json()))
        assert doc["Name"] == "maxq" and doc["Exit"] == rec.exit.value
        assert len(doc["trace"]) == len(rec.trace)

    def test_problem_object_accepted(self):
        rec = run(get_problem("maxq", 4), "bundle", limits=Limits(max_iter=5))
        assert rec.name == "maxq"


class TestDiagnostics:
    def test_psi_envelope(self):
        rec = run("chained crescent 1", "bundle", n=10, trace=True, limits=Limits(max_iter=100))
        report = diagnostics_report(rec)
        assert report.updates > 0
        assert report.envelope_violations == 0
        assert 0.0 <= report.beta_zero_fraction <= 1.0
        assert set(report.cos_phi_quantiles) == {"min", "q25", "median", "q75", "max"}

    def test_untraced(self):
        rec = run("maxq", "bundle", n=4, limits=Limits(max_iter=3))
        assert diagnostics_report(rec).updates == 0
