"""Outer loop of the variable-metric framework, termination and run records."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .metric import (
    DampingParams,
    Metric,
    MetricError,
    correction_diagnostics,
    psi,
    psi_growth_bound,
)
from .problems import ProblemSpec, get_problem
from .strategies import (
    BFGSStrategy,
    BundleStrategy,
    Oracle,
    RadiusPolicy,
    SamplingConfig,
    SamplingStrategy,
    StepKind,
    StrategyError,
    radius_update,
)
from .subproblem import QPError

ALGORITHMS = ("bfgs", "bundle", "gs")


class ConfigError(ValueError):
    """Invalid run configuration; reported before the first iteration."""


class Exit(str, Enum):
    STATIONARY = "Stationary"
    ITERATION = "Iteration"
    STEPSIZE = "Stepsize"
    FAILURE = "Failure"


@dataclass(frozen=True)
class FrameworkParams:
    alpha: float = 1e-15
    eta: float = 1e-12
    theta: float = 20.0
    r: float = 1e-15
    h_bar: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.r > 0:
            raise ConfigError("r must be positive")
        try:
            self.damping()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def damping(self) -> DampingParams:
        return DampingParams(eta=self.eta, theta=self.theta, h_bar=self.h_bar)


@dataclass(frozen=True)
class Limits:
    max_iter: int = 10_000
    stepsize_min: float = 1e-15
    grad_factor: float = 10.0
    delta_tol: float = 1e-4
    wall_clock: float = 600.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")
        if not self.wall_clock > 0:
            raise ConfigError("wall_clock must be positive")


@dataclass
class TraceRow:
    k: int
    f: float
    delta: float
    kind: str
    Gw_norm: float
    s_norm: float
    d_norm: float
    stepsize: float
    beta: float | None = None
    psi: float | None = None
    cos_phi: float | None = None
    iota: float | None = None
    sufficient: bool | None = None


@dataclass
class RunRecord:
    name: str
    algorithm: str
    exit: Exit
    delta_end: float
    f_end: float
    iters: int
    func_evals: int
    grad_evals: int
    subproblem_solves: int
    seed: int = 0
    x_end: np.ndarray | None = field(default=None, repr=False)
    Gw_end: float = math.nan
    timed_out: bool = False
    message: str = ""
    trace: list[TraceRow] = field(default_factory=list, repr=False)
    psi_start: float | None = None
    growth_bound: float | None = None
    metric_hash: str = ""
    qp_fallbacks: int = 0

    def row(self) -> dict:
        return {
            "Name": self.name,
            "Exit": self.exit.value,
            "delta_end": self.delta_end,
            "f_end": self.f_end,
            "#iter": self.iters,
            "#func": self.func_evals,
            "#grad": self.grad_evals,
            "#subs": self.subproblem_solves,
        }

    def to_json(self, with_trace: bool = True) -> dict:
        out = self.row()
        out.update(algorithm=self.algorithm, seed=self.seed, Gw_end=self.Gw_end,
                   timed_out=self.timed_out, qp_fallbacks=self.qp_fallbacks,
                   message=self.message)
        if self.x_end is not None:
            out["x_end"] = self.x_end.tolist()
        if with_trace and self.trace:
            out["trace"] = [asdict(t) for t in self.trace]
        return out


def check_termination(Gw_norm: float, delta: float, grad_factor: float = 10.0,
                      delta_tol: float = 1e-4) -> bool:
    """Success test: small convex-combination norm relative to a small radius."""
    return Gw_norm <= grad_factor * delta and delta <= delta_tol


def make_strategy(algorithm: str, params: FrameworkParams, seed: int = 0,
                  sampling: SamplingConfig | None = None):
    if algorithm == "bfgs":
        return BFGSStrategy(alpha=params.alpha)
    if algorithm == "bundle":
        return BundleStrategy(alpha=params.alpha, r=params.r, nonconvex=True)
    if algorithm == "gs":
        cfg = sampling or SamplingConfig(rng_seed=seed)
        return SamplingStrategy(alpha=params.alpha, config=cfg)
    raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")


def _hash(W: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(W).tobytes()).hexdigest()


def run(problem: ProblemSpec | str, algorithm: str = "bundle",
        params: FrameworkParams | None = None, policy: RadiusPolicy | None = None,
        limits: Limits | None = None, seed: int = 0, n: int = 50, trace: bool = False,
        verify: bool = False, sampling: SamplingConfig | None = None,
        strategy=None) -> RunRecord:
    """Minimize ``problem`` with the chosen step strategy.

    ``trace`` records the conditioning diagnostics per iteration.  ``verify``
    asserts the per-step invariants (monotone ``f``,
    sufficient reduction, nonincreasing radius, untouched metric on skipped
    updates) and raises ``AssertionError`` on a violation.
    """
    if isinstance(problem, str):
        try:
            problem = get_problem(problem, n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    params = params or FrameworkParams()
    policy = RadiusPolicy(**asdict(policy)) if policy else RadiusPolicy()
    limits = limits or Limits()
    if strategy is None:
        strategy = make_strategy(algorithm, params, seed, sampling)
    damping = params.damping()

    oracle = Oracle(problem)
    x = problem.starting_point()
    f = oracle.f(x)
    g = oracle.g(x)
    metric = Metric.identity(problem.dim)
    diagnose = verify or trace
    rec = RunRecord(name=problem.name, algorithm=algorithm, exit=Exit.ITERATION,
                    delta_end=policy.delta, f_end=f, iters=0, func_evals=0, grad_evals=0,
                    subproblem_solves=0, seed=seed)
    if diagnose:
        rec.psi_start = psi(metric.H)
        rec.growth_bound = psi_growth_bound(damping)
    t_start = time.monotonic()
    Gw_norm = math.nan
    k = 0
    try:
        while True:
            if k >= limits.max_iter:
                rec.exit = Exit.ITERATION
                break
            if time.monotonic() - t_start > limits.wall_clock:
                rec.exit = Exit.ITERATION
                rec.timed_out = True
                break
            k += 1
            delta = policy.delta
            W_before = metric.W.copy() if verify else None
            out = strategy.step(oracle, x, f, g, metric.W, delta, H_k=metric.H)
            Gw_norm = float(np.linalg.norm(out.G_omega))
            s_norm = float(np.linalg.norm(out.s))
            row = TraceRow(k=k, f=f, delta=delta, kind=out.kind.value, Gw_norm=Gw_norm,
                           s_norm=s_norm, d_norm=out.d_norm, stepsize=out.stepsize)
            if out.kind is StepKind.BREAKDOWN:
                rec.exit = Exit.STEPSIZE
                if trace:
                    rec.trace.append(row)
                break
            if out.kind is StepKind.SERIOUS:
                if verify:
                    # d'Wd as -d's: the step satisfies s = -W d
                    dWd = -float(out.d @ out.s)
                    row.sufficient = bool(out.f_plus <= f - 0.5 * params.alpha * dWd)
                    assert row.sufficient, f"sufficient reduction violated at iteration {k}"
                    assert out.f_plus <= f, f"objective increased at iteration {k}"
                if out.stepsize < limits.stepsize_min:
                    rec.exit = Exit.STEPSIZE
                    break
                g_plus = out.g_plus if out.g_plus is not None else oracle.g(out.x_plus)
                y = g_plus - g
                if not out.skip_update:
                    H_before = metric.H
                    pair = metric.update(out.s, y, damping)
                    if pair is not None:
                        row.beta = pair.beta
                        if diagnose:
                            try:
                                diag = correction_diagnostics(H_before, out.s)
                            except MetricError:
                                # H indefinite at rounding level: psi is undefined
                                diag = None
                            if diag is not None:
                                row.psi, row.cos_phi, row.iota = diag.psi, diag.cos_phi, diag.iota
                x, f, g = out.x_plus, out.f_plus, g_plus
            elif verify:
                assert np.array_equal(metric.W, W_before), "skipped update changed W"
            done = check_termination(Gw_norm, delta, limits.grad_factor, limits.delta_tol)
            new_delta = radius_update(policy, out.d_norm, s_norm, Gw_norm)
            if out.shrink:
                new_delta = policy.tau * delta
            if verify:
                assert new_delta <= delta
            if trace:
                rec.trace.append(row)
            if done:
                rec.exit = Exit.STATIONARY
                break
            if new_delta < limits.stepsize_min:
                # the radius doubles as the stepsize scale for the trust-region steps
                rec.exit = Exit.STEPSIZE
                break
            policy.delta = new_delta
            if hasattr(strategy, "carry_over"):
                strategy.carry_over(x, policy.delta)
    except (QPError, StrategyError, MetricError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec.exit = Exit.FAILURE
        rec.message = f"{type(exc).__name__}: {exc}"
    rec.delta_end = policy.delta
    rec.f_end = f
    rec.x_end = np.asarray(x).copy()
    rec.iters = k
    rec.Gw_end = Gw_norm
    rec.func_evals, rec.grad_evals, rec.subproblem_solves = oracle.counters.snapshot()
    rec.metric_hash = _hash(metric.W)
    rec.qp_fallbacks = oracle.qp_fallbacks
    return rec


@dataclass
class DiagnosticsSummary:
    iterations: int
    updates: int
    cos_phi_quantiles: dict
    iota_quantiles: dict
    beta_quantiles: dict
    beta_zero_fraction: float
    cos_phi_above: float
    psi: list
    envelope: list
    envelope_violations: int


def _quantiles(vals) -> dict:
    if not vals:
        return {}
    q = np.quantile(np.asarray(vals, dtype=float), [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(("min", "q25", "median", "q75", "max"), (float(v) for v in q)))


def diagnostics_report(rec: RunRecord, cos_threshold: float = 0.1) -> DiagnosticsSummary:
    """Distribution of the conditioning diagnostics along a traced run.

    ``psi`` values are those of the matrices used for each update; the
    envelope is ``psi(H_1) + j (theta - 1 - ln eta)`` for the ``j``-th one.
    """
    rows = [t for t in rec.trace if t.psi is not None]
    cos = [t.cos_phi for t in rows]
    iota = [t.iota for t in rows]
    beta = [t.beta for t in rec.trace if t.beta is not None]
    psis = [t.psi for t in rows]
    base = rec.psi_start if rec.psi_start is not None else (psis[0] if psis else 0.0)
    growth = rec.growth_bound or 0.0
    envelope = [base + j * growth for j in range(len(psis))]
    violations = sum(1 for p, e in zip(psis, envelope) if p > e + 1e-8 * max(1.0, abs(e)))
    return DiagnosticsSummary(
        iterations=len(rec.trace),
        updates=len(rows),
        cos_phi_quantiles=_quantiles(cos),
        iota_quantiles=_quantiles(iota),
        beta_quantiles=_quantiles(beta),
        beta_zero_fraction=(sum(1 for b in beta if b == 0.0) / len(beta)) if beta else 0.0,
        cos_phi_above=(sum(1 for c in cos if c > cos_threshold) / len(cos)) if cos else 0.0,
        psi=psis,
        envelope=envelope,
        envelope_violations=violations,
    )
