"""Variable-metric bookkeeping: damped curvature pairs and BFGS-form updates.

``W`` is the inverse Hessian approximation used to compute steps and ``H`` its
inverse.  Both are updated from the same damped pair.  Once damping has
stretched ``W`` by factors near ``1/eta`` its rounding errors swamp its small
eigenvalues, so trust-region steps are computed from ``H`` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEGENERATE_STEP = 1e-15


class MetricError(ValueError):
    """Raised when an update would destroy positive definiteness."""


class DegenerateStepError(MetricError):
    """Raised for a (numerically) zero displacement; the caller must skip."""


def _as_matrix(h_bar, n: int) -> np.ndarray:
    if np.isscalar(h_bar):
        return float(h_bar) * np.eye(n)
    return np.asarray(h_bar, dtype=float)


@dataclass(frozen=True)
class DampingParams:
    """Bounds ``eta <= s'v/|s|^2`` and ``|v|^2/s'v <= theta`` on damped pairs.

    ``h_bar`` is the fixed matrix mixed into ``y``; a scalar means that
    multiple of the identity.  ``theta = inf`` switches the second bound off.
    """

    eta: float = 1e-12
    theta: float = 20.0
    h_bar: float | np.ndarray = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        lo, hi = self.h_bar_eigen_bounds()
        if lo <= 0:
            raise ValueError("h_bar must be positive definite")
        if self.eta > lo * (1 + 1e-12):
            raise ValueError(f"eta={self.eta} exceeds lambda_min(h_bar)={lo}")
        if self.theta < hi * (1 - 1e-12):
            raise ValueError(f"theta={self.theta} is below lambda_max(h_bar)={hi}")

    def h_bar_eigen_bounds(self) -> tuple[float, float]:
        if np.isscalar(self.h_bar):
            return float(self.h_bar), float(self.h_bar)
        ev = np.linalg.eigvalsh(np.asarray(self.h_bar, dtype=float))
        return float(ev[0]), float(ev[-1])

    def h_bar_times(self, s: np.ndarray) -> np.ndarray:
        if np.isscalar(self.h_bar):
            return float(self.h_bar) * s
        return np.asarray(self.h_bar, dtype=float) @ s


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    y: np.ndarray
    v: np.ndarray
    beta: float

    @property
    def sv(self) -> float:
        return float(self.s @ self.v)


@dataclass(frozen=True)
class PsiRecord:
    psi: float
    cos_phi: float
    iota: float


def satisfies_bounds(s: np.ndarray, v: np.ndarray, params: DampingParams) -> bool:
    """Check both damping bounds exactly as evaluated in floating point."""
    ss = float(s @ s)
    sv = float(s @ v)
    if not sv > 0 or sv / ss < params.eta:
        return False
    if math.isinf(params.theta):
        return True
    return float(v @ v) / sv <= params.theta


def _lower_end(s, y, w, ss, params) -> float:
    # Smallest beta allowed by each bound; both feasible sets contain beta = 1.
    sy = float(s @ y)
    sw = float(s @ w)
    lo = 0.0
    # eta bound: sy + beta*sw >= eta*ss
    if sw > 0:
        lo = max(lo, (params.eta * ss - sy) / sw)
    if math.isinf(params.theta):
        return lo
    # theta bound: |y + beta w|^2 - theta (sy + beta sw) <= 0
    a = float(w @ w)
    if a == 0.0:
        return lo
    b = 2.0 * float(y @ w) - params.theta * sw
    c = float(y @ y) - params.theta * sy
    if c <= 0:
        # q(0) <= 0, so the interval between the roots already reaches 0
        return lo
    disc = b * b - 4.0 * a * c
    if disc < 0:
        disc = 0.0
    root = math.sqrt(disc)
    # stable pair of roots; the smaller one is the lower end of the interval
    if b < 0:
        q = -0.5 * (b - root)
        r1, r2 = c / q, q / a
    else:
        q = -0.5 * (b + root)
        r1, r2 = q / a, c / q if q != 0 else 0.0
    return max(lo, min(r1, r2))


def compute_damping(s, y, params: DampingParams) -> CurvaturePair:
    """Smallest ``beta`` in [0, 1] so that ``v = beta*h_bar@s + (1-beta)*y``
    satisfies both damping bounds.

    The eta bound is linear in ``beta`` and the theta bound a quadratic, so
    the answer is the larger of their lower ends; a bisection on
    ``[beta, 1]`` cleans up when rounding leaves that point just infeasible.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    ss = float(s @ s)
    if not math.sqrt(ss) > DEGENERATE_STEP:
        raise DegenerateStepError("zero displacement; skip the update")
    hs = params.h_bar_times(s)
    w = hs - y

    def mix(beta):
        if beta == 0.0:
            return y.copy()
        if beta == 1.0:
            return hs.copy()
        return beta * hs + (1.0 - beta) * y

    beta = min(1.0, _lower_end(s, y, w, ss, params))
    v = mix(beta)
    if not satisfies_bounds(s, v, params):
        lo, hi = beta, 1.0
        while hi - lo > 1e-12:
            mid = 0.5 * (lo + hi)
            if satisfies_bounds(s, mix(mid), params):
                hi = mid
            else:
                lo = mid
        beta = hi
        v = mix(beta)
        if not satisfies_bounds(s, v, params):
            beta, v = 1.0, hs.copy()
    return CurvaturePair(s=s, y=y, v=v, beta=float(beta))


def _check_pair(s, v):
    sv = float(s @ v)
    if not sv > 0:
        raise MetricError(f"curvature condition violated: s'v = {sv}")
    return sv


def update_inverse(W: np.ndarray, pair: CurvaturePair) -> np.ndarray:
    """BFGS update of the inverse approximation; the result maps ``v`` to ``s``."""
    s, v = pair.s, pair.v
    rho = 1.0 / _check_pair(s, v)
    Wv = W @ v
    vWv = float(v @ Wv)
    Wp = W - rho * (np.outer(s, Wv) + np.outer(Wv, s)) + (rho * rho * vWv + rho) * np.outer(s, s)
    return 0.5 * (Wp + Wp.T)


def update_hessian(H: np.ndarray, pair: CurvaturePair) -> np.ndarray:
    """Companion update of ``H = W^{-1}``; the result maps ``s`` to ``v``."""
    s, v = pair.s, pair.v
    sv = _check_pair(s, v)
    Hs = H @ s
    sHs = float(s @ Hs)
    if not sHs > 0:
        raise MetricError(f"H is not positive definite along s: s'Hs = {sHs}")
    Hp = H - np.outer(Hs, Hs) / sHs + np.outer(v, v) / sv
    return 0.5 * (Hp + Hp.T)


def _cholesky(H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise MetricError("matrix is not positive definite") from exc


def is_positive_definite(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def usable_hessian(H: np.ndarray, rtol: float = 1e-10) -> bool:
    """Positive definite up to eigenvalues within ``rtol`` of the largest.

    The subproblem solver treats curvature below that relative level as
    zero, so this is the test an ``H`` has to pass to be used there.
    """
    if not np.all(np.isfinite(H)):
        return False
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    return bool(ev[-1] > 0 and ev[0] >= -rtol * ev[-1])


def psi(H: np.ndarray) -> float:
    """``trace(H) - ln det(H)``; equals ``n`` at the identity and grows with
    distance from it."""
    L = _cholesky(np.asarray(H, dtype=float))
    return float(np.trace(H) - 2.0 * np.sum(np.log(np.diag(L))))


def correction_diagnostics(H: np.ndarray, s) -> PsiRecord:
    s = np.asarray(s, dtype=float)
    ns = float(np.linalg.norm(s))
    if ns == 0.0:
        raise DegenerateStepError("zero displacement")
    Hs = H @ s
    sHs = float(s @ Hs)
    return PsiRecord(
        psi=psi(H),
        cos_phi=sHs / (ns * float(np.linalg.norm(Hs))),
        iota=sHs / (ns * ns),
    )


def psi_growth_bound(params: DampingParams) -> float:
    """Per-update ceiling on the increase of ``psi(H)``."""
    return params.theta - 1.0 - math.log(params.eta)


@dataclass
class Metric:
    """Mutable holder for the current ``W`` and, optionally, ``H = W^{-1}``.

    Both are updated from the same damped pair, so ``H`` never has to be
    obtained by inverting a badly conditioned ``W``.
    """

    W: np.ndarray
    H: np.ndarray | None = None
    updates: int = 0
    skipped: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def identity(cls, n: int, hessian: bool = True) -> "Metric":
        return cls(W=np.eye(n), H=np.eye(n) if hessian else None)

    def update(self, s, y, params: DampingParams) -> CurvaturePair | None:
        """Damp ``(s, y)`` and apply the update; returns ``None`` when skipped."""
        try:
            pair = compute_damping(s, y, params)
        except DegenerateStepError:
            self.skipped += 1
            return None
        H = self.H
        if H is not None:
            try:
                H = update_hessian(H, pair)
            except MetricError:
                H = None
            if H is None or not usable_hessian(H):
                # rounding has made H indefinite, which only happens once
                # conditioning is lost (e.g. with theta = inf); skipping
                # keeps W and H consistent instead of ending the run
                self.skipped += 1
                return None
        with np.errstate(all="ignore"):
            W = update_inverse(self.W, pair)
        if not np.all(np.isfinite(W)):
            # overflow, again only reachable without the curvature bound
            self.skipped += 1
            return None
        self.W = W
        self.H = H
        self.updates += 1
        return pair
