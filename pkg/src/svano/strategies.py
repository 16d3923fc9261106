"""Step computations for the framework: BFGS line search, bundle trust region,
and gradient sampling, together with the weak Wolfe search and the radius
policy they share.

Every strategy produces ``s = -W (G w + gamma)`` and reports ``G w`` and
``gamma`` separately, since the outer loop needs ``|G w|`` for termination
and all three norms for the radius update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .subproblem import (
    BundleSet,
    DualSolution,
    OffsetMode,
    QPError,
    TrustRegion,
    assemble_offsets,
    solve_dual,
    warm_start,
)


class StrategyError(RuntimeError):
    """Raised when a step procedure cannot continue (e.g. inner-loop cap)."""


class StepKind(str, Enum):
    SERIOUS = "serious"
    NULL = "null"
    BREAKDOWN = "breakdown"


@dataclass
class Counters:
    func: int = 0
    grad: int = 0
    subs: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return (self.func, self.grad, self.subs)


class Oracle:
    """Counting wrapper around a problem's value and subgradient functions."""

    def __init__(self, problem):
        self.problem = problem
        self.counters = Counters()
        self.qp_fallbacks = 0

    @property
    def dim(self) -> int:
        return self.problem.dim

    def f(self, x) -> float:
        self.counters.func += 1
        return self.problem.evaluate(x)

    def g(self, x) -> np.ndarray:
        self.counters.grad += 1
        return self.problem.subgradient(x)

    def kink_gap(self, x) -> float:
        return self.problem.kink_gap(x)

    def solved_subproblem(self) -> None:
        self.counters.subs += 1


@dataclass
class StepOutcome:
    s: np.ndarray
    x_plus: np.ndarray
    G_omega: np.ndarray
    gamma: np.ndarray
    kind: StepKind
    skip_update: bool
    counters_delta: tuple[int, int, int] = (0, 0, 0)
    f_plus: float = math.nan
    g_plus: np.ndarray | None = None
    stepsize: float = 1.0
    shrink: bool = False
    stationary: bool = False
    d_norm: float = 0.0

    @property
    def d(self) -> np.ndarray:
        return self.G_omega + self.gamma


@dataclass(frozen=True)
class LineSearchParams:
    """Coefficients of the weak Wolfe search; ``c1`` multiplies ``t^2 g'd``."""

    c1: float = 0.5e-15
    c2: float = 0.9
    alpha_min: float = 1e-15
    max_iters: int = 60

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if not self.alpha_min > 0:
            raise ValueError("alpha_min must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    @classmethod
    def from_alpha(cls, alpha: float, **kw) -> "LineSearchParams":
        return cls(c1=0.5 * alpha, **kw)


@dataclass
class RadiusPolicy:
    delta: float = 0.1
    tau: float = 0.5
    upsilon1: float = 1.0
    upsilon2: float = 1.0
    upsilon3: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if min(self.upsilon1, self.upsilon2, self.upsilon3) <= 0:
            raise ValueError("upsilon weights must be positive")


@dataclass(frozen=True)
class SamplingConfig:
    """Gradient sampling settings.

    ``sample_count`` new points are drawn per iteration (default ``2n``);
    previously sampled points still inside the current box are kept up to
    ``max_samples`` in total (default ``3n``).
    """

    sample_count: int | None = None
    rng_seed: int = 0
    stepsize_threshold: float = 1e-10
    backtrack_factor: float = 0.5
    max_samples: int | None = None
    resample_tries: int = 20
    probe_budget: int = 10

    def __post_init__(self):
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not self.stepsize_threshold > 0:
            raise ValueError("stepsize_threshold must be positive")
        if self.probe_budget < 0:
            raise ValueError("probe_budget must be nonnegative")


def radius_update(policy: RadiusPolicy, Gw_plus_gamma_norm: float, s_norm: float,
                  Gw_norm: float) -> float:
    """Shrink by ``tau`` when every weighted norm fits inside the radius."""
    largest = max(policy.upsilon1 * Gw_plus_gamma_norm,
                  policy.upsilon2 * s_norm,
                  policy.upsilon3 * Gw_norm)
    if largest <= policy.delta:
        return policy.tau * policy.delta
    return policy.delta


# --- weak Wolfe line search ----------------------------------------------

@dataclass
class LineSearchResult:
    ok: bool
    t: float
    f: float
    g: np.ndarray | None
    iters: int


def weak_wolfe_search(oracle, x, d, params: LineSearchParams, f0: float | None = None,
                      g0=None, slope0: float | None = None, t0: float = 1.0,
                      fallback_ok: bool = False) -> LineSearchResult:
    """Bracketing bisection/doubling search along ``d``.

    Accepts ``t`` with ``f(x + t d) <= f0 + c1 t^2 slope0`` and
    ``g(x + t d)'d >= c2 slope0``.  ``slope0`` defaults to ``g0'd``.
    With ``fallback_ok`` the last point that satisfied the decrease test is
    returned when the curvature test is never met.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        raise ValueError("search direction is zero")
    if f0 is None:
        f0 = oracle.f(x)
    if slope0 is None:
        if g0 is None:
            g0 = oracle.g(x)
        slope0 = float(np.asarray(g0) @ d)
    lo, hi = 0.0, math.inf
    t = float(t0)
    best = None
    for it in range(1, params.max_iters + 1):
        xt = x + t * d
        ft = oracle.f(xt)
        if not ft <= f0 + params.c1 * t * t * slope0:
            hi = t
        else:
            gt = oracle.g(xt)
            if float(gt @ d) >= params.c2 * slope0:
                return LineSearchResult(True, t, ft, gt, it)
            best = (t, ft, gt)
            lo = t
        t = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * t
        if t < params.alpha_min:
            break
    if fallback_ok and best is not None:
        return LineSearchResult(True, best[0], best[1], best[2], params.max_iters)
    return LineSearchResult(False, t, math.nan, None, params.max_iters)


def solve_subproblem(oracle, bundle, W, tr, start=None, H=None, start_s=None) -> DualSolution:
    """Subproblem solve that falls back to the solver's best iterate.

    A warm start that fails is retried cold first.  The fallback is sound
    because acceptance is always decided by the decrease test on ``f``.
    """
    warm = start is not None or start_s is not None
    try:
        sol = solve_dual(bundle, W, tr, start=start, H=H, start_s=start_s)
    except QPError as exc:
        sol = None
        if warm:
            try:
                sol = solve_dual(bundle, W, tr, H=H)
            except QPError as exc2:
                exc = exc2
        if sol is None:
            oracle.qp_fallbacks += 1
            sol = exc.best
    oracle.solved_subproblem()
    return sol


def _outcome(kind, x, s, Gw, gamma, W, oracle, before, **kw) -> StepOutcome:
    after = oracle.counters.snapshot()
    d = Gw + gamma
    return StepOutcome(
        s=s, x_plus=x + s, G_omega=Gw, gamma=gamma, kind=kind,
        skip_update=kind is not StepKind.SERIOUS,
        counters_delta=tuple(a - b for a, b in zip(after, before)),
        d_norm=float(np.linalg.norm(d)), **kw,
    )


def sufficient_reduction(f_k: float, f_plus: float, d, W, alpha: float, s=None) -> bool:
    """``f(x+) <= f(x) - alpha/2 d'Wd`` for the framework's step ``s = -W d``.

    With ``s`` given, ``d'Wd`` is evaluated as ``-d's``, which stays accurate
    when ``W`` is too badly conditioned to multiply by reliably.
    """
    dWd = -float(d @ s) if s is not None else float(d @ (W @ d))
    return f_plus <= f_k - 0.5 * alpha * dWd


# --- BFGS ---------------------------------------------------------------

def bfgs_step(oracle, x_k, f_k, g_k, W_k, alpha: float,
              ls: LineSearchParams | None = None) -> StepOutcome:
    """Quasi-Newton direction with a weak Wolfe stepsize.

    On success ``G w = g_k`` and ``gamma = (t - 1) g_k`` so that
    ``s = -t W g_k``.
    """
    ls = ls or LineSearchParams.from_alpha(alpha)
    before = oracle.counters.snapshot()
    g_k = np.asarray(g_k, dtype=float)
    direction = -(W_k @ g_k)
    oracle.solved_subproblem()
    zero = np.zeros_like(g_k)
    if not np.any(direction):
        return _outcome(StepKind.BREAKDOWN, x_k, zero, g_k, zero, W_k, oracle, before, stepsize=0.0)
    res = weak_wolfe_search(oracle, x_k, direction, ls, f0=f_k, slope0=float(g_k @ direction))
    if not res.ok:
        return _outcome(StepKind.BREAKDOWN, x_k, zero, g_k, zero, W_k, oracle, before,
                        stepsize=res.t)
    t = res.t
    gamma = (t - 1.0) * g_k
    return _outcome(StepKind.SERIOUS, x_k, t * direction, g_k, gamma, W_k, oracle, before,
                    f_plus=res.f, g_plus=res.g, stepsize=t)


# --- bundle -------------------------------------------------------------

@dataclass
class BundleConfig:
    """Inner-loop limits for the trust-region bundle step."""

    null_budget: int = 50
    inner_cap: int = 1000
    max_columns: int = 500
    stationarity_tol: float = 1e-12
    refine: bool = True


def _evict(bundle: BundleSet, omega: np.ndarray, limit: int) -> np.ndarray:
    # drop the oldest columns with zero weight until the bundle fits
    excess = bundle.size - limit
    if excess <= 0:
        return omega
    mask = np.ones(bundle.size, dtype=bool)
    for j in range(1, bundle.size):
        if excess == 0:
            break
        if omega[j] == 0.0:
            mask[j] = False
            excess -= 1
    if excess > 0:
        # every column active: drop the oldest non-center ones anyway
        for j in range(1, bundle.size):
            if excess == 0:
                break
            if mask[j]:
                mask[j] = False
                excess -= 1
    bundle.keep(mask)
    return omega[mask]


class BundleStrategy:
    """Cutting-plane trust-region step.

    ``nonconvex=True`` downshifts the planes, exits with a null step when
    every norm already fits inside the radius, falls back to a line search
    after ``null_budget`` rejected candidates, and refines every serious step
    with a weak Wolfe search.  The bundle is carried across iterations,
    restricted to the box of the next radius around the next iterate.
    """

    def __init__(self, alpha: float = 1e-15, r: float = 1e-15, nonconvex: bool = True,
                 config: BundleConfig | None = None, ls: LineSearchParams | None = None):
        self.alpha = alpha
        self.r = r
        self.nonconvex = nonconvex
        self.config = config or BundleConfig()
        self.ls = ls or LineSearchParams.from_alpha(alpha)
        self.carried: BundleSet | None = None

    def _initial_bundle(self, x_k, f_k, g_k, delta) -> BundleSet:
        bundle = BundleSet.start(x_k, f_k, g_k)
        old = self.carried
        if old is not None:
            dist = np.max(np.abs(old.points - x_k[None, :]), axis=1)
            for j in np.flatnonzero(dist <= delta):
                if dist[j] == 0.0 and np.array_equal(old.grads[j], g_k):
                    continue
                bundle.add(old.points[j], old.values[j], old.grads[j])
        return bundle

    def carry_over(self, x_next, delta_next) -> None:
        """Restrict the stored bundle to the ball around the next iterate."""
        if self.carried is None:
            return
        dist = np.max(np.abs(self.carried.points - np.asarray(x_next)[None, :]), axis=1)
        keep = dist <= delta_next
        b = self.carried
        b.points, b.values, b.grads = b.points[keep], b.values[keep], b.grads[keep]
        b.offsets = None

    def step(self, oracle, x_k, f_k, g_k, W_k, delta: float,
             policy: RadiusPolicy | None = None, H_k: np.ndarray | None = None) -> StepOutcome:
        x_k = np.asarray(x_k, dtype=float)
        g_k = np.asarray(g_k, dtype=float)
        cfg = self.config
        before = oracle.counters.snapshot()
        tr = TrustRegion(delta)
        policy = policy or RadiusPolicy(delta=delta)
        mode = OffsetMode.DOWNSHIFT if self.nonconvex else OffsetMode.CONVEX
        bundle = self._initial_bundle(x_k, f_k, g_k, delta)
        start = start_s = None
        nulls = 0
        for _ in range(cfg.inner_cap):
            assemble_offsets(bundle, mode, self.r)
            sol = solve_subproblem(oracle, bundle, W_k, tr, start, H=H_k, start_s=start_s)
            Gw = bundle.G @ sol.omega
            d, s = sol.d, sol.s
            if self.nonconvex:
                largest = max(policy.upsilon1 * np.linalg.norm(d),
                              policy.upsilon2 * np.linalg.norm(s),
                              policy.upsilon3 * np.linalg.norm(Gw))
                if largest <= delta:
                    self._store(bundle)
                    zero = np.zeros_like(x_k)
                    return _outcome(StepKind.NULL, x_k, zero, Gw, sol.gamma, W_k, oracle,
                                    before, shrink=True, stepsize=0.0)
            gap = f_k - sol.z
            if gap <= cfg.stationarity_tol * max(1.0, abs(f_k)):
                self._store(bundle)
                zero = np.zeros_like(x_k)
                return _outcome(StepKind.NULL, x_k, zero, Gw, sol.gamma, W_k, oracle,
                                before, shrink=True, stationary=True, stepsize=0.0)
            x_trial = x_k + s
            f_trial = oracle.f(x_trial)
            if f_k - f_trial >= self.alpha * gap and sufficient_reduction(
                    f_k, f_trial, d, W_k, self.alpha, s):
                g_trial = oracle.g(x_trial)
                t, f_plus, g_plus = 1.0, f_trial, g_trial
                if self.nonconvex and self.config.refine:
                    res = weak_wolfe_search(oracle, x_k, s, self.ls, f0=f_k,
                                            slope0=float(d @ s), t0=1.0,
                                            fallback_ok=True)
                    if res.ok and res.t != 1.0:
                        t, f_plus, g_plus = res.t, res.f, res.g
                bundle.add(x_trial, f_trial, g_trial)
                self._store(bundle)
                return _outcome(StepKind.SERIOUS, x_k, t * s, Gw, t * d - Gw, W_k, oracle,
                                before, f_plus=f_plus, g_plus=g_plus, stepsize=t)
            g_trial = oracle.g(x_trial)
            nulls += 1
            if self.nonconvex and nulls >= cfg.null_budget:
                res = weak_wolfe_search(oracle, x_k, s, self.ls, f0=f_k,
                                        slope0=float(d @ s), t0=1.0)
                bundle.add(x_trial, f_trial, g_trial)
                self._store(bundle)
                if not res.ok:
                    zero = np.zeros_like(x_k)
                    return _outcome(StepKind.BREAKDOWN, x_k, zero, Gw, sol.gamma, W_k,
                                    oracle, before, stepsize=res.t)
                return _outcome(StepKind.SERIOUS, x_k, res.t * s, Gw, res.t * d - Gw, W_k,
                                oracle, before, f_plus=res.f, g_plus=res.g, stepsize=res.t)
            omega = np.append(sol.omega, 0.0)
            bundle.add(x_trial, f_trial, g_trial)
            if bundle.size > cfg.max_columns:
                omega = _evict(bundle, omega, cfg.max_columns)
            start = (omega, sol.gamma) if omega.sum() > 0 else None
            start_s = sol.s
        raise StrategyError(f"bundle inner loop exceeded {cfg.inner_cap} iterations")

    def _store(self, bundle: BundleSet) -> None:
        self.carried = bundle


def bundle_step_convex(oracle, x_k, f_k, g_k, W_k, tr: TrustRegion, alpha: float,
                       config: BundleConfig | None = None) -> StepOutcome:
    """One cutting-plane step for convex ``f`` with exact linearization offsets."""
    strat = BundleStrategy(alpha=alpha, nonconvex=False, config=config)
    return strat.step(oracle, x_k, f_k, g_k, W_k, tr.delta)


def bundle_step_nonconvex(oracle, x_k, f_k, g_k, W_k, tr: TrustRegion, alpha: float,
                          r: float, radius_policy: RadiusPolicy,
                          config: BundleConfig | None = None) -> StepOutcome:
    """One downshifted cutting-plane step with a fresh bundle."""
    strat = BundleStrategy(alpha=alpha, r=r, nonconvex=True, config=config)
    return strat.step(oracle, x_k, f_k, g_k, W_k, tr.delta, radius_policy)


# --- gradient sampling ----------------------------------------------------

class SamplingStrategy:
    """Trust-region gradient sampling with retained samples.

    All planes are anchored at ``f(x_k)``.  New points are drawn uniformly
    from the box of half-width ``delta``; old samples inside the same box
    around the current iterate are reused.  A backtracking search
    from the unit step enforces the sufficient reduction condition; a
    stepsize below ``stepsize_threshold`` yields a null step that skips the
    metric update and shrinks the radius.  The previous iterate and the last
    rejected trial point join the retained samples.
    """

    def __init__(self, alpha: float = 1e-15, config: SamplingConfig | None = None):
        self.alpha = alpha
        self.config = config or SamplingConfig()
        self.rng = np.random.default_rng(self.config.rng_seed)
        self.points = np.zeros((0, 0))
        self.grads = np.zeros((0, 0))
        # old iterates and rejected trial points, kept apart from the random
        # samples so that fresh draws never push them out
        self.probe_points = np.zeros((0, 0))
        self.probe_grads = np.zeros((0, 0))

    def _draw(self, oracle, x_k, delta):
        cfg = self.config
        n = x_k.size
        for _ in range(cfg.resample_tries):
            p = x_k + self.rng.uniform(-delta, delta, size=n)
            if oracle.kink_gap(p) > 0:
                return p
        raise StrategyError("could not sample a differentiable point")

    def step(self, oracle, x_k, f_k, g_k, W_k, delta: float,
             H_k: np.ndarray | None = None) -> StepOutcome:
        cfg = self.config
        x_k = np.asarray(x_k, dtype=float)
        g_k = np.asarray(g_k, dtype=float)
        n = x_k.size
        before = oracle.counters.snapshot()
        count = cfg.sample_count if cfg.sample_count is not None else 2 * n
        cap = cfg.max_samples if cfg.max_samples is not None else 3 * n
        cap = max(cap, count)
        self.points, self.grads = _in_box(self.points, self.grads, x_k, delta)
        self.probe_points, self.probe_grads = _in_box(self.probe_points, self.probe_grads,
                                                      x_k, delta)
        new_p = [self._draw(oracle, x_k, delta) for _ in range(count)]
        new_g = [oracle.g(p) for p in new_p]
        self.points = np.vstack([self.points, np.array(new_p)])[-cap:]
        self.grads = np.vstack([self.grads, np.array(new_g)])[-cap:]

        zero = np.zeros_like(x_k)
        for attempt in range(cfg.probe_budget + 1):
            bundle = BundleSet.start(x_k, f_k, g_k)
            for p, g in zip(np.vstack([self.points, self.probe_points]),
                            np.vstack([self.grads, self.probe_grads])):
                bundle.add(p, f_k, g)
            assemble_offsets(bundle, OffsetMode.SAMPLED)
            sol = solve_subproblem(oracle, bundle, W_k, TrustRegion(delta), H=H_k)
            Gw = bundle.G @ sol.omega
            d, s = sol.d, sol.s
            dWd = -float(d @ s)
            t = 1.0
            while t >= cfg.stepsize_threshold and np.any(s):
                f_t = oracle.f(x_k + t * s)
                if f_t <= f_k - 0.5 * self.alpha * t * t * dWd:
                    g_t = oracle.g(x_k + t * s)
                    # the old iterate is one of the points and is carried over like the rest
                    self._retain(x_k, g_k, cap)
                    return _outcome(StepKind.SERIOUS, x_k, t * s, Gw, t * d - Gw, W_k, oracle,
                                    before, f_plus=f_t, g_plus=g_t, stepsize=t)
                t *= cfg.backtrack_factor
            if not np.any(s):
                break
            # the last rejected trial point sits past a kink the samples missed;
            # its gradient is a cut that rules this step out of the next model
            p = x_k + (t / cfg.backtrack_factor) * s
            if not oracle.kink_gap(p) > 0:
                break
            self._retain(p, oracle.g(p), cap)
        return _outcome(StepKind.NULL, x_k, zero, Gw, sol.gamma, W_k, oracle, before,
                        shrink=True, stepsize=t)

    def _retain(self, p, g, cap):
        self.probe_points = np.vstack([self.probe_points, p[None, :]])[-cap:]
        self.probe_grads = np.vstack([self.probe_grads, g[None, :]])[-cap:]


def _in_box(points, grads, x, delta):
    """Rows within the l-inf box around ``x``, excluding ``x`` itself."""
    n = x.size
    if not points.size:
        return np.zeros((0, n)), np.zeros((0, n))
    dist = np.max(np.abs(points - x[None, :]), axis=1)
    keep = (dist <= delta) & (dist > 0)
    return points[keep], grads[keep]


def gs_step(oracle, x_k, f_k, g_k, W_k, tr: TrustRegion, config: SamplingConfig,
            alpha: float) -> StepOutcome:
    """One gradient sampling step without retained samples."""
    return SamplingStrategy(alpha=alpha, config=config).step(oracle, x_k, f_k, g_k, W_k,
                                                             tr.delta)


class BFGSStrategy:
    """Stateless adapter giving :func:`bfgs_step` the common strategy interface."""

    def __init__(self, alpha: float = 1e-15, ls: LineSearchParams | None = None):
        self.alpha = alpha
        self.ls = ls or LineSearchParams.from_alpha(alpha)

    def step(self, oracle, x_k, f_k, g_k, W_k, delta: float,
             H_k: np.ndarray | None = None) -> StepOutcome:
        return bfgs_step(oracle, x_k, f_k, g_k, W_k, self.alpha, self.ls)
