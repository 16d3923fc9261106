"""Cutting-plane subproblem: assembly, dual active-set QP, primal recovery.

The step subproblem is

    min_x  max_j {b_j + g_j'(x - x_k)} + 1/2 (x - x_k)' H (x - x_k)
    s.t.   ||x - x_k||_inf <= delta

and is solved through its dual

    max_{w in simplex, gamma}  -1/2 (G w + gamma)' W (G w + gamma) + b'w - delta ||gamma||_1

with ``W = H^{-1}``.  The solver splits ``gamma = gamma_plus - gamma_minus``
and runs a primal active-set method on the resulting bound-constrained QP.
The reduced Hessian may be singular (more columns than dimensions); such
working sets are handled with zero-curvature descent directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .metric import usable_hessian

PIVOT_FACTOR = 50
OPT_TOL = 1e-12


class QPError(RuntimeError):
    """Solver failure; ``best`` holds the best feasible iterate found.

    Any feasible ``(omega, gamma)`` yields a valid framework step, so callers
    may continue with ``best`` and let the decrease test judge it.
    """

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class OffsetMode(str, Enum):
    CONVEX = "convex"
    DOWNSHIFT = "downshift"
    SAMPLED = "sampled"


@dataclass
class BundleSet:
    """Bundle around ``center``; row ``j`` of ``points``/``grads`` is element j.

    Element 0 is always the center itself.  ``offsets`` is filled by
    :func:`assemble_offsets`.
    """

    center: np.ndarray
    f_center: float
    points: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    offsets: np.ndarray | None = None

    @classmethod
    def start(cls, x, f, g) -> "BundleSet":
        x = np.asarray(x, dtype=float)
        return cls(
            center=x.copy(),
            f_center=float(f),
            points=x[None, :].copy(),
            values=np.array([float(f)]),
            grads=np.asarray(g, dtype=float)[None, :].copy(),
        )

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def G(self) -> np.ndarray:
        return self.grads.T

    def add(self, x, f, g) -> None:
        self.points = np.vstack([self.points, np.asarray(x, dtype=float)[None, :]])
        self.values = np.append(self.values, float(f))
        self.grads = np.vstack([self.grads, np.asarray(g, dtype=float)[None, :]])
        self.offsets = None

    def keep(self, mask) -> None:
        mask = np.asarray(mask, dtype=bool)
        if not mask[0]:
            raise ValueError("the center element cannot be dropped")
        self.points = self.points[mask]
        self.values = self.values[mask]
        self.grads = self.grads[mask]
        if self.offsets is not None:
            self.offsets = self.offsets[mask]


@dataclass(frozen=True)
class TrustRegion:
    delta: float = math.inf

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("trust region radius must be positive")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.delta)


@dataclass
class DualSolution:
    omega: np.ndarray
    gamma: np.ndarray
    z: float
    t: np.ndarray
    objective: float
    pivots: int = 0
    converged: bool = True
    d: np.ndarray | None = field(default=None, repr=False)
    s: np.ndarray | None = field(default=None, repr=False)


def assemble_offsets(bundle: BundleSet, mode: OffsetMode | str = OffsetMode.CONVEX,
                     r: float = 1e-15) -> np.ndarray:
    """Plane offsets at the center.

    ``convex`` uses the plain linearization value at the center,
    ``downshift`` additionally caps it by ``f(x_k) - r|x_k - x_j|^2`` so the
    model never exceeds ``f`` at the center, and ``sampled`` anchors every
    gradient at ``f(x_k)`` as gradient sampling does.
    """
    mode = OffsetMode(mode)
    if mode is OffsetMode.SAMPLED:
        b = np.full(bundle.size, bundle.f_center)
    else:
        diff = bundle.center[None, :] - bundle.points
        b = bundle.values + np.einsum("ij,ij->i", bundle.grads, diff)
        if mode is OffsetMode.DOWNSHIFT:
            shift = bundle.f_center - r * np.einsum("ij,ij->i", diff, diff)
            b = np.minimum(shift, b)
    bundle.offsets = b
    return b


def model_value(bundle: BundleSet, x) -> float:
    """Cutting-plane model at ``x`` (offsets must be assembled)."""
    step = np.asarray(x, dtype=float) - bundle.center
    planes = bundle.offsets + bundle.grads @ step
    return float(planes[int(np.argmax(planes))])


def warm_start(prev: DualSolution, new_column_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Previous weights padded with zeros for the new columns; gamma kept."""
    omega = np.concatenate([prev.omega, np.zeros(int(new_column_count))])
    return omega, prev.gamma.copy()


def _helmert(k: int) -> np.ndarray:
    # orthonormal basis of {w in R^k : sum(w) = 0}
    Z = np.zeros((k, k - 1))
    for j in range(1, k):
        c = 1.0 / math.sqrt(j * (j + 1))
        Z[:j, j - 1] = c
        Z[j, j - 1] = -j * c
    return Z


class _DualQP:
    """Active-set state for one dual solve."""

    def __init__(self, G, b, W, delta):
        self.G = G
        self.b = b
        self.W = W
        self.n, self.m = G.shape
        self.delta = delta
        self.bounded = math.isfinite(delta)
        self.N = self.m + (2 * self.n if self.bounded else 0)
        In = np.eye(self.n)
        self.A = np.hstack([G, In, -In]) if self.bounded else G

    def direction(self, u):
        return self.A @ u

    def gradient(self, Wd):
        grad = np.empty(self.N)
        grad[: self.m] = self.G.T @ Wd - self.b
        if self.bounded:
            grad[self.m: self.m + self.n] = Wd + self.delta
            grad[self.m + self.n:] = -Wd + self.delta
        return grad

    def objective(self, u):
        d = self.direction(u)
        val = 0.5 * float(d @ self.W @ d) - float(self.b @ u[: self.m])
        if self.bounded:
            val += self.delta * float(np.sum(u[self.m:]))
        return val

    def eqp_step(self, F, grad, tol_slope):
        """Minimize the quadratic over the free set with sum(w) fixed.

        Returns ``(p, unbounded)``; ``unbounded`` marks a zero-curvature
        descent direction, which must be followed until a bound blocks.
        """
        F = np.asarray(F)
        omega_idx = F < self.m
        k = int(np.count_nonzero(omega_idx))
        nf = F.size
        # ordering inside F is sorted, so omega entries come first
        Z = np.zeros((nf, nf - 1 if k > 0 else nf))
        if k > 0:
            Z[:k, : k - 1] = _helmert(k)
            Z[k:, k - 1:] = np.eye(nf - k)
        else:
            Z[:, :] = np.eye(nf)
        if Z.shape[1] == 0:
            return np.zeros(nf), False
        MZ = self.A[:, F] @ Z
        R = MZ.T @ self.W @ MZ
        r = Z.T @ grad[F]
        lam, V = np.linalg.eigh(0.5 * (R + R.T))
        lam_max = max(float(lam[-1]), 0.0)
        zero = lam <= 1e-11 * lam_max if lam_max > 0 else np.ones(lam.size, dtype=bool)
        rh = V.T @ r
        if np.any(zero):
            y0 = -(V[:, zero] @ rh[zero])
            slope = float(r @ y0)
            if slope < -tol_slope:
                return Z @ y0, True
        pos = ~zero
        y = -(V[:, pos] @ (rh[pos] / lam[pos]))
        return Z @ y, False

    def solve(self, u, F, max_pivots, stall_window=None):
        pivots = 0
        degenerate = 0
        solved = False
        stall_window = stall_window or 2 * self.N + 20
        best_val, best_u, since_best = math.inf, u.copy(), 0
        while True:
            d = self.direction(u)
            Wd = self.W @ d
            val = 0.5 * float(d @ Wd) - float(self.b @ u[: self.m])
            if self.bounded:
                val += self.delta * float(np.sum(u[self.m:]))
            if val < best_val - 1e-13 * (1.0 + abs(val)):
                best_val, best_u, since_best = val, u.copy(), 0
            else:
                since_best += 1
            if pivots > max_pivots:
                raise QPError(f"pivot limit {max_pivots} exceeded", best=best_u)
            if since_best > stall_window:
                # rounding noise dominates the remaining progress
                raise QPError(f"no progress in {stall_window} pivots", best=best_u)
            grad = self.gradient(Wd)
            scale = 1.0 + float(np.max(np.abs(grad))) + float(np.max(np.abs(self.b)))
            tol = OPT_TOL * scale
            if not solved:
                p, unbounded = self.eqp_step(F, grad, tol * tol)
                pnorm = float(np.max(np.abs(p))) if p.size else 0.0
                if pnorm <= 1e-15 * (1.0 + float(np.max(np.abs(u)))) and not unbounded:
                    solved = True
                    continue
                Fa = np.asarray(F)
                # exact line minimizer keeps every step monotone even when the
                # reduced Hessian is too ill-conditioned for a reliable full step
                slope = float(grad[Fa] @ p)
                if slope >= -tol * pnorm:
                    solved = True
                    continue
                Ap = self.A[:, Fa] @ p
                curv = float(Ap @ (self.W @ Ap))
                alpha_star = -slope / curv if curv > 0 else math.inf
                pivots += 1
                neg = p < -1e-300
                if np.any(neg):
                    ratios = -u[Fa[neg]] / p[neg]
                    alpha_block = float(np.min(ratios))
                    block = int(Fa[neg][int(np.argmin(ratios))])
                else:
                    alpha_block = math.inf
                    block = -1
                if not math.isfinite(min(alpha_star, alpha_block)):
                    raise QPError("dual subproblem unbounded along a null direction", best=(u, F))
                alpha = min(alpha_star, alpha_block)
                u[Fa] += alpha * p
                if alpha_block <= alpha_star:
                    u[block] = 0.0
                    F = [i for i in F if i != block]
                    degenerate = degenerate + 1 if alpha <= 1e-14 else 0
                    u[np.asarray(F)] = np.maximum(u[np.asarray(F)], 0.0)
                else:
                    # a unit Newton step reaches the working-set minimizer;
                    # otherwise solve again from the improved point
                    solved = abs(alpha_star - 1.0) <= 1e-6 and not unbounded
                continue
            # optimality check on the fixed variables
            Fa = np.asarray(F)
            omega_free = Fa[Fa < self.m]
            lam = -float(np.mean(grad[omega_free])) if omega_free.size else 0.0
            mult = grad.copy()
            mult[: self.m] += lam
            mult[Fa] = math.inf
            if self.bounded:
                # never free both halves of one gamma component
                for i in Fa[Fa >= self.m]:
                    j = i - self.m
                    twin = self.m + (j + self.n) % (2 * self.n)
                    mult[twin] = math.inf
            cand = np.flatnonzero(mult < -tol)
            if cand.size == 0:
                return u, F, pivots
            if degenerate > 10:
                enter = int(cand[0])
            else:
                enter = int(cand[np.argmin(mult[cand])])
            F = sorted(F + [enter])
            solved = False
            pivots += 1


class _PrimalQP:
    """Active-set method on the primal form in ``(s, xi)``.

    Minimizes ``xi + 1/2 s'Hs`` subject to ``g_j's - xi <= -b_j`` and
    ``|s_i| <= delta``.  Working constraints are plane indices plus box
    coordinates fixed at a bound; the equality subproblem is solved in the
    null space of the working planes restricted to the free coordinates.
    """

    def __init__(self, G, b, H, delta):
        self.G = G
        self.b = b
        self.H = H
        self.n, self.m = G.shape
        self.delta = delta

    def objective(self, s, xi):
        return xi + 0.5 * float(s @ (self.H @ s))

    def eqp_step(self, J, free, c, tol_slope):
        F = np.flatnonzero(free)
        nf = F.size
        if J:
            A = np.hstack([self.G[np.ix_(F, J)].T, -np.ones((len(J), 1))])
            _, sv, Vt = np.linalg.svd(A)
            rank = int(np.count_nonzero(sv > 1e-12 * sv[0]))
            Z = Vt[rank:].T
        else:
            Z = np.eye(nf + 1)
        if Z.shape[1] == 0:
            return np.zeros(nf + 1), False
        Zs = Z[:nf]
        R = Zs.T @ self.H[np.ix_(F, F)] @ Zs
        r = Z.T @ c
        lam, V = np.linalg.eigh(0.5 * (R + R.T))
        lam_max = max(float(lam[-1]), 0.0)
        zero = lam <= 1e-11 * lam_max if lam_max > 0 else np.ones(lam.size, dtype=bool)
        rh = V.T @ r
        if np.any(zero):
            y0 = -(V[:, zero] @ rh[zero])
            if float(r @ y0) < -tol_slope:
                return Z @ y0, True
        pos = ~zero
        y = -(V[:, pos] @ (rh[pos] / lam[pos]))
        return Z @ y, False

    def multipliers(self, s, J, bound):
        """Plane and box multipliers at a working-set minimizer."""
        free = bound == 0
        Hs = self.H @ s
        A = np.vstack([self.G[np.ix_(free, J)], -np.ones((1, len(J)))])
        rhs = -np.concatenate([Hs[free], [1.0]])
        lam = np.linalg.lstsq(A, rhs, rcond=None)[0]
        fixed = ~free
        mu = np.zeros(self.n)
        mu[fixed] = -bound[fixed] * (Hs[fixed] + self.G[np.ix_(fixed, J)] @ lam)
        return lam, mu

    def solve(self, s, max_pivots, stall_window=None):
        n, m, delta = self.n, self.m, self.delta
        s = np.clip(s, -delta, delta)
        bound = np.zeros(n, dtype=int)
        bound[s >= delta] = 1
        bound[s <= -delta] = -1
        planes = self.b + self.G.T @ s
        xi = float(np.max(planes))
        J = [int(np.argmax(planes))]
        lam = np.ones(1)
        pivots = 0
        degenerate = 0
        solved = False
        stall_window = stall_window or 2 * (m + 2 * n) + 20
        best_val, best, since_best = math.inf, (s.copy(), xi, list(J), lam), 0
        gscale = 1.0 + float(np.max(np.abs(self.G)))
        while True:
            val = self.objective(s, xi)
            if val < best_val - 1e-13 * (1.0 + abs(val)):
                best_val, since_best = val, 0
                best = (s.copy(), xi, list(J), None)
            else:
                since_best += 1
            if pivots > max_pivots:
                raise QPError(f"pivot limit {max_pivots} exceeded", best=best)
            if since_best > stall_window:
                raise QPError(f"no progress in {stall_window} pivots", best=best)
            Hs = self.H @ s
            free = bound == 0
            c = np.concatenate([Hs[free], [1.0]])
            tol = OPT_TOL * (gscale + float(np.max(np.abs(Hs))))
            if not solved:
                p, unbounded = self.eqp_step(J, free, c, tol * tol)
                pnorm = float(np.max(np.abs(p)))
                if pnorm <= 1e-15 * (1.0 + delta + abs(xi)) and not unbounded:
                    solved = True
                    continue
                slope = float(c @ p)
                if slope >= -tol * pnorm:
                    solved = True
                    continue
                F = np.flatnonzero(free)
                ps = p[:-1]
                curv = float(ps @ (self.H[np.ix_(F, F)] @ ps))
                alpha_star = -slope / curv if curv > 0 else math.inf
                pivots += 1
                # ratio test: planes outside the working set, then box bounds
                full = np.zeros(n)
                full[F] = ps
                rate = self.G.T @ full - p[-1]
                slack = xi - (self.b + self.G.T @ s)
                out = np.ones(m, dtype=bool)
                out[J] = False
                cand = out & (rate > 1e-14 * (1.0 + pnorm * gscale))
                ratios = np.full(m + n, math.inf)
                ratios[:m][cand] = np.maximum(slack[cand], 0.0) / rate[cand]
                up = ps > 1e-300
                lo = ps < -1e-300
                box = np.full(F.size, math.inf)
                box[up] = (delta - s[F][up]) / ps[up]
                box[lo] = (delta + s[F][lo]) / -ps[lo]
                ratios[m + F] = np.maximum(box, 0.0)
                alpha_block = float(np.min(ratios))
                # ties go to the smallest index, which with the leaving rule
                # below is Bland's rule and rules out cycling
                ties = ratios <= alpha_block + 1e-15 * (1.0 + alpha_block)
                block = int(np.flatnonzero(ties)[0])
                alpha = min(alpha_star, alpha_block)
                if not math.isfinite(alpha):
                    raise QPError("primal subproblem unbounded", best=best)
                s[F] += alpha * ps
                xi += alpha * p[-1]
                if alpha_block <= alpha_star:
                    if block < m:
                        J.append(block)
                    else:
                        i = block - m
                        bound[i] = 1 if ps[np.searchsorted(F, i)] > 0 else -1
                        s[i] = bound[i] * delta
                    degenerate = degenerate + 1 if alpha <= 1e-14 else 0
                else:
                    solved = abs(alpha_star - 1.0) <= 1e-6 and not unbounded
                continue
            lam, mu = self.multipliers(s, J, bound)
            fixed = np.flatnonzero(bound != 0)
            mult = np.concatenate([lam, mu[fixed]])
            ids = np.concatenate([np.asarray(J, dtype=int), m + fixed])
            cand = np.flatnonzero(mult < -tol)
            if cand.size == 0:
                return s, xi, J, lam, pivots
            if degenerate > 10:
                leave = int(cand[np.argmin(ids[cand])])
            else:
                leave = int(cand[np.argmin(mult[cand])])
            if leave < len(J):
                del J[leave]
            else:
                bound[fixed[leave - len(J)]] = 0
            solved = False
            pivots += 1


def solve_dual(bundle: BundleSet, W: np.ndarray, tr: TrustRegion,
               start: tuple[np.ndarray, np.ndarray] | None = None,
               max_pivots: int | None = None, H: np.ndarray | None = None,
               start_s: np.ndarray | None = None) -> DualSolution:
    """Solve the dual subproblem by active-set pivoting.

    ``start`` is a feasible ``(omega, gamma)`` guess, e.g. from
    :func:`warm_start`; without it all weight starts on the first column.

    When ``H = W^{-1}`` is supplied and the radius is finite, the same KKT
    point is computed from the primal side instead: the weights are the
    plane multipliers and ``gamma = -Hs - Gw``.  This avoids forming
    ``s = -W(Gw + gamma)``, which loses about ``log10 cond(W)`` digits once
    damped updates have stretched ``W`` along a few directions.
    ``start_s`` is then an optional feasible step to start from.
    """
    if bundle.offsets is None:
        raise ValueError("assemble offsets before solving")
    primal = H is not None and tr.bounded
    if primal:
        # the active-set method treats curvature below a relative threshold
        # as zero, so rounding-level indefiniteness of H is harmless
        if not usable_hessian(H):
            raise ValueError("metric H must be positive definite")
    else:
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError as exc:
            raise ValueError("metric W must be positive definite") from exc
    G = bundle.G
    b = bundle.offsets
    n, m = G.shape
    if primal:
        return _solve_primal(G, b, W, H, tr, start_s, max_pivots)
    qp = _DualQP(G, b, W, tr.delta)
    u = np.zeros(qp.N)
    if start is None:
        u[0] = 1.0
    else:
        omega0, gamma0 = start
        omega0 = np.maximum(np.asarray(omega0, dtype=float), 0.0)
        total = omega0.sum()
        if omega0.size != m or not total > 0:
            raise ValueError("warm start does not match the bundle")
        u[:m] = omega0 / total
        if qp.bounded:
            u[m: m + n] = np.maximum(gamma0, 0.0)
            u[m + n:] = np.maximum(-gamma0, 0.0)
    F = sorted(int(i) for i in np.flatnonzero(u > 0))
    limit = max_pivots if max_pivots is not None else PIVOT_FACTOR * (m + 2 * n)
    try:
        u, F, pivots = qp.solve(u, F, limit)
    except QPError as exc:
        raise QPError(str(exc), best=_solution(qp, exc.best, tr, limit, converged=False)) from None
    return _solution(qp, u, tr, pivots)


def _solution(qp: _DualQP, u: np.ndarray, tr: TrustRegion, pivots: int,
              converged: bool = True) -> DualSolution:
    G, b, W = qp.G, qp.b, qp.W
    n, m = G.shape
    omega = u[:m].copy()
    omega /= omega.sum()
    gamma = u[m: m + n] - u[m + n:] if qp.bounded else np.zeros(n)
    d = G @ omega + gamma
    s = -(W @ d)
    if qp.bounded:
        # bound components come back off the box by rounding only
        s = np.clip(s, -tr.delta, tr.delta)
    planes = b + G.T @ s
    z = float(np.max(planes))
    t = s / tr.delta if qp.bounded else np.zeros(n)
    penalty = tr.delta * float(np.sum(np.abs(gamma))) if qp.bounded else 0.0
    objective = -0.5 * float(d @ (W @ d)) + float(b @ omega) - penalty
    return DualSolution(omega=omega, gamma=gamma, z=z, t=t, objective=objective,
                        pivots=pivots, d=d, s=s, converged=converged)


def _solve_primal(G, b, W, H, tr, start_s, max_pivots) -> DualSolution:
    n, m = G.shape
    qp = _PrimalQP(G, b, H, tr.delta)
    if start_s is None:
        # planes sharing an offset all pass through s = 0; starting inside the
        # box away from that vertex keeps the first pivots nondegenerate
        s0 = -G.mean(axis=1)
        peak = float(np.max(np.abs(s0)))
        s0 = 0.5 * tr.delta * s0 / peak if peak > 0 else np.zeros(n)
    else:
        s0 = np.asarray(start_s, dtype=float)
    limit = max_pivots if max_pivots is not None else PIVOT_FACTOR * (m + 2 * n)
    try:
        s, _, J, lam, pivots = qp.solve(s0, limit)
    except QPError as exc:
        s, _, J, _ = exc.best
        # multipliers of the best working set, clipped to the simplex
        bound = np.where(s >= tr.delta, 1, np.where(s <= -tr.delta, -1, 0))
        lam = qp.multipliers(s, J, bound)[0]
        raise QPError(str(exc), best=_primal_solution(G, b, W, H, tr, s, J, lam, limit,
                                                      converged=False)) from None
    return _primal_solution(G, b, W, H, tr, s, J, lam, pivots)


def _primal_solution(G, b, W, H, tr, s, J, lam, pivots, converged=True) -> DualSolution:
    m = G.shape[1]
    s = np.clip(s, -tr.delta, tr.delta)
    omega = np.zeros(m)
    np.add.at(omega, np.asarray(J, dtype=int), np.maximum(lam, 0.0))
    total = omega.sum()
    if not total > 0:
        omega[J[0] if J else 0] = 1.0
        total = 1.0
    omega /= total
    Hs = H @ s
    gamma = -Hs - G @ omega
    d = -Hs
    z = float(np.max(b + G.T @ s))
    # d'Wd = s'Hs since Wd = -s; this form never touches W
    objective = -0.5 * float(s @ Hs) + float(b @ omega) - tr.delta * float(np.sum(np.abs(gamma)))
    return DualSolution(omega=omega, gamma=gamma, z=z, t=s / tr.delta, objective=objective,
                        pivots=pivots, d=d, s=s.copy(), converged=converged)


@dataclass(frozen=True)
class PrimalStep:
    s: np.ndarray
    x_plus: np.ndarray
    l_value: float
    q_value: float


def recover_primal(bundle: BundleSet, W: np.ndarray, sol: DualSolution) -> PrimalStep:
    """Primal minimizer ``x_k - W(Gw + gamma)`` with its model values."""
    d = bundle.G @ sol.omega + sol.gamma
    # the solver's own step equals -Wd up to rounding and avoids the product
    s = sol.s if sol.s is not None else -(W @ d)
    x_plus = bundle.center + s
    l_value = model_value(bundle, x_plus)
    q_value = l_value + 0.5 * float(d @ (-s))
    return PrimalStep(s=s, x_plus=x_plus, l_value=l_value, q_value=q_value)


def kkt_residual(sol: DualSolution, bundle: BundleSet, W: np.ndarray, tr: TrustRegion) -> float:
    """Largest violation among the dual optimality conditions.

    Covers simplex feasibility, equal plane values over the support of the
    weights, and the trust-region certificate ``t = s/delta`` with
    ``||t||_inf <= 1`` and ``t'gamma = ||gamma||_1``.
    """
    omega, gamma = sol.omega, sol.gamma
    res = max(abs(float(omega.sum()) - 1.0), max(0.0, -float(np.min(omega))))
    d = bundle.G @ omega + gamma
    s = sol.s if sol.s is not None else -(W @ d)
    planes = bundle.offsets + bundle.grads @ s
    z = float(np.max(planes))
    active = omega > 0
    if np.any(active):
        res = max(res, float(np.max(z - planes[active])) / (1.0 + abs(z)))
    if tr.bounded:
        t = s / tr.delta
        g1 = float(np.sum(np.abs(gamma)))
        res = max(res, float(np.max(np.abs(t))) - 1.0)
        res = max(res, abs(float(t @ gamma) - g1) / (1.0 + g1))
    else:
        res = max(res, float(np.max(np.abs(gamma))))
    return res
