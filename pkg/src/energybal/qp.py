"""Quadratic programs over products of scaled simplices.

Solves::

    minimize    0.5 w'Pw + q'w + constant
    subject to  sum(w[g]) == s_g  for every group g,   w >= 0

where ``P`` may be indefinite on R^n but is positive semidefinite on the
subspace where every group sum is zero. The solver is ADMM on the split
``w = z`` with the group-sum constraints kept in the smooth block and the
simplex constraints in the projection block, followed by an active-set
polish.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, null_space

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

ACTIVE_THRESHOLD = 1e-8


class InfeasibleProblem(ValueError):
    pass


@dataclass
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    groups: list  # [(index array, required sum), ...]
    constant: float = 0.0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.groups = [(np.asarray(idx, dtype=np.int64), float(s)) for idx, s in self.groups]
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError("P and q have inconsistent sizes")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.P).max())):
            raise ValueError("P must be symmetric")
        seen = np.zeros(n, dtype=int)
        for idx, s in self.groups:
            seen[idx] += 1
            if not s > 0:
                raise ValueError("required group sums must be positive")
        if np.any(seen != 1):
            raise ValueError("every index must belong to exactly one group")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(0.5 * w @ self.P @ w + self.q @ w + self.constant)

    def group_matrix(self) -> np.ndarray:
        G = np.zeros((len(self.groups), self.n))
        for k, (idx, _) in enumerate(self.groups):
            G[k, idx] = 1.0
        return G

    def group_sums(self) -> np.ndarray:
        return np.array([s for _, s in self.groups])

    def group_of(self) -> np.ndarray:
        g = np.empty(self.n, dtype=np.int64)
        for k, (idx, _) in enumerate(self.groups):
            g[idx] = k
        return g


@dataclass
class QpSolution:
    w: np.ndarray
    objective: float
    primal_residual: float
    iterations: int
    status: str
    rho: float = 1.0
    polished: bool = False
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def feasible_start(problem: QuadraticProgram) -> np.ndarray:
    """Uniform weights within every group, meeting each required sum exactly."""
    w = np.empty(problem.n)
    for idx, s in problem.groups:
        w[idx] = s / len(idx)
    return w


def project_simplex(v, s: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = s}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - s
    k = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / k > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _project(problem, v):
    out = np.empty_like(v)
    for idx, s in problem.groups:
        out[idx] = project_simplex(v[idx], s)
    return out


def kkt_residuals(problem: QuadraticProgram, w) -> tuple[float, float, float]:
    """(stationarity, primal, complementarity) residuals at ``w``.

    Group multipliers are the least-squares fit of ``-grad`` on the inactive
    coordinates (``w_i >= 1e-8``); bound multipliers on the active set follow
    from stationarity and count as a violation when negative.
    """
    w = np.asarray(w, dtype=float)
    grad = problem.P @ w + problem.q
    stat = 0.0
    comp = 0.0
    primal = max(0.0, float(-w.min()))
    for idx, s in problem.groups:
        primal = max(primal, abs(float(w[idx].sum()) - s))
        g = grad[idx]
        free = w[idx] >= ACTIVE_THRESHOLD
        nu = -float(g[free].mean()) if free.any() else -float(g.min())
        if free.any():
            stat = max(stat, float(np.abs(g[free] + nu).max()))
        mu = g[~free] + nu
        if mu.size:
            stat = max(stat, float(np.maximum(-mu, 0.0).max()))
            comp = max(comp, float(np.abs(mu * w[idx][~free]).max()))
    return stat, primal, comp


class _SubspaceSolver:
    """Solves the equality-constrained ADMM w-step for any rho.

    With ``M`` an orthonormal basis of {v : G v = 0} diagonalising ``M'PM``,
    the minimiser of 0.5 w'(P + rho I)w - b'w over {G w = s} is
    ``w0 + M diag(1 / (lam + rho)) (M'b - M'P w0)``, where ``w0`` is the
    uniform feasible point (orthogonal to the subspace).
    """

    def __init__(self, problem: QuadraticProgram):
        G = problem.group_matrix()
        N = null_space(G) if problem.n > len(problem.groups) else np.zeros((problem.n, 0))
        lam, V = eigh(N.T @ problem.P @ N) if N.shape[1] else (np.zeros(0), np.zeros((0, 0)))
        self.M = N @ V
        self.lam = lam
        self.w0 = feasible_start(problem)
        self.c = self.M.T @ (problem.P @ self.w0)

    def solve(self, b, rho):
        return self.w0 + self.M @ ((self.M.T @ b - self.c) / (self.lam + rho))


def _polish(problem: QuadraticProgram, z: np.ndarray, tol: float, max_passes: int = 25):
    """Active-set refinement started from the support of ``z``.

    Solves the equality-constrained QP on the free set, then frees active
    coordinates with negative bound multipliers or fixes free coordinates that
    went negative, until the KKT conditions hold. Returns None on failure.
    """
    free = z > 1e-9 * max(1.0, float(z.max()))
    gof = problem.group_of()
    K = len(problem.groups)
    s_req = problem.group_sums()
    for _ in range(max_passes):
        fidx = np.flatnonzero(free)
        # every group needs at least one free coordinate
        if len(np.unique(gof[fidx])) < K:
            return None
        nf = len(fidx)
        G = np.zeros((K, nf))
        G[gof[fidx], np.arange(nf)] = 1.0
        kkt = np.zeros((nf + K, nf + K))
        kkt[:nf, :nf] = problem.P[np.ix_(fidx, fidx)]
        kkt[:nf, nf:] = G.T
        kkt[nf:, :nf] = G
        rhs = np.concatenate([-problem.q[fidx], s_req])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        wf = sol[:nf]
        if wf.min() < 0:
            free[fidx[wf < 0]] = False
            continue
        w = np.zeros(problem.n)
        w[fidx] = wf
        nu = sol[nf:]
        mu = problem.P @ w + problem.q + nu[gof]
        bad = (~free) & (mu < -tol)
        if bad.any():
            free |= bad
            continue
        stat, primal, _ = kkt_residuals(problem, w)
        if primal > tol or stat > tol:
            return None
        return w
    return None


def solve_qp(problem: QuadraticProgram, tol: float = 1e-7, max_iter: int = 20000, *,
             rho: float = 1.0, alpha: float = 1.6, adapt_every: int = 25,
             polish: bool = True, polish_every: int = 10) -> QpSolution:
    """Minimise the QP from the uniform feasible start.

    Convergence means ``||w - z||_inf <= tol`` and ``rho ||z - z_prev||_inf <= tol``
    (both scaled by the problem's natural magnitudes); the returned weights are
    the projected iterate ``z``, which meets every constraint exactly.
    """
    for idx, _ in problem.groups:
        if len(idx) == 0:
            raise InfeasibleProblem("empty group")
    start = feasible_start(problem)
    f_start = problem.objective(start)
    sub = _SubspaceSolver(problem)

    z = start.copy()
    u = np.zeros(problem.n)
    scale_w = max(1.0, float(np.abs(start).max()))
    scale_g = max(float(np.abs(problem.q).max()), float(np.abs(problem.P @ start).max()), 1e-12)
    # a polished point is accepted only if it is KKT-optimal at this level
    polish_tol = max(tol * scale_g, 1e-14) * 10
    early = None
    last_support, tried = None, set()
    status = MAX_ITER
    it = 0
    r_prim = r_dual = np.inf
    for it in range(1, max_iter + 1):
        x = sub.solve(rho * (z - u) - problem.q, rho)
        xr = alpha * x + (1 - alpha) * z
        z_prev = z
        z = _project(problem, xr + u)
        u = u + xr - z
        r_prim = float(np.abs(x - z).max()) / scale_w
        r_dual = rho * float(np.abs(z - z_prev).max()) / scale_g
        if r_prim <= tol and r_dual <= tol:
            status = CONVERGED
            break
        if polish and it % polish_every == 0:
            support = (z > 0).tobytes()
            if support == last_support and support not in tried:
                tried.add(support)
                wp = _polish(problem, z, tol=polish_tol)
                if wp is not None:
                    early = wp
                    status = CONVERGED
                    break
            last_support = support
        if it % adapt_every == 0:
            ratio = np.sqrt(r_prim / max(r_dual, 1e-300))
            if ratio > 5 or ratio < 0.2:
                new_rho = float(np.clip(rho * ratio, 1e-8, 1e8))
                u *= rho / new_rho
                rho = new_rho

    w = z
    polished = False
    if early is not None:
        w, polished = early, True
    elif polish:
        wp = _polish(problem, z, tol=polish_tol)
        if wp is not None and problem.objective(wp) <= problem.objective(z) + 1e-12:
            w, polished = wp, True
            if status != CONVERGED:
                status = CONVERGED
    if status != CONVERGED:
        logger.warning("QP solver stopped after %d iterations (primal %.2e, dual %.2e)",
                       it, r_prim, r_dual)
    f = problem.objective(w)
    if f > f_start + tol:
        # the uniform start is feasible; never return something worse
        w, f = start, f_start
    primal = max(abs(float(w[idx].sum()) - s) for idx, s in problem.groups)
    return QpSolution(w=w, objective=f, primal_residual=primal, iterations=it,
                      status=status, rho=rho, polished=polished)
