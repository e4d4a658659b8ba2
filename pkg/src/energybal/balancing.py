"""Energy balancing weights: QP assembly for each variant and the solve wrapper."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import DataError, Sample, require_binary, standardize
from .energy import (EnergyBreakdown, between_group_weighted_energy, distance_matrix,
                     weighted_energy_distance)
from .qp import CONVERGED, QpSolution, QuadraticProgram, solve_qp

logger = logging.getLogger(__name__)

METHODS = ("ebw", "iebw", "att", "multi", "multi_improved")
CLAMP = 1e-10


class SolverWarning(UserWarning):
    pass


@dataclass
class BalancingWeights:
    w: np.ndarray
    method: str
    solver: QpSolution
    energies: dict = field(default_factory=dict)
    target_label: Optional[int] = None

    @property
    def converged(self) -> bool:
        return self.solver.status == CONVERGED

    @property
    def total_energy(self) -> float:
        return float(sum(v.value if isinstance(v, EnergyBreakdown) else v
                         for v in self.energies.values()))

    def a5_statistic(self) -> float:
        return float(self.w.max() / len(self.w) ** (1 / 3))


def _groups(sample: Sample, min_size: int = 1):
    out = []
    for a in sample.labels:
        idx = np.flatnonzero(sample.A == a)
        if len(idx) < min_size:
            raise DataError(f"treatment group {a} has {len(idx)} units; need at least {min_size}")
        out.append((int(a), idx))
    return out


def _group_to_pooled(D, groups, n):
    P = np.zeros_like(D)
    q = np.zeros(n)
    rowsum = D.sum(axis=1)
    for _, idx in groups:
        na = len(idx)
        P[np.ix_(idx, idx)] = -2.0 / na**2 * D[np.ix_(idx, idx)]
        q[idx] = 2.0 / (na * n) * rowsum[idx]
    constant = -len(groups) * float(D.sum()) / n**2
    return P, q, constant


def _add_pairwise(P, D, groups):
    for (_, ia), (_, ib) in itertools.combinations(groups, 2):
        na, nb = len(ia), len(ib)
        P[np.ix_(ia, ia)] -= 2.0 / na**2 * D[np.ix_(ia, ia)]
        P[np.ix_(ib, ib)] -= 2.0 / nb**2 * D[np.ix_(ib, ib)]
        cross = 2.0 / (na * nb) * D[np.ix_(ia, ib)]
        P[np.ix_(ia, ib)] += cross
        P[np.ix_(ib, ia)] += cross.T


def ebw_problem(sample: Sample, D) -> QuadraticProgram:
    """Group-to-pooled energy objective summed over treated and control."""
    require_binary(sample)
    return multi_problem(sample, D, improved=False)


def iebw_problem(sample: Sample, D) -> QuadraticProgram:
    """EBW objective plus the treated-versus-control weighted energy distance."""
    require_binary(sample)
    return multi_problem(sample, D, improved=True)


def multi_problem(sample: Sample, D, improved: bool = False) -> QuadraticProgram:
    groups = _groups(sample)
    if len(groups) < 2:
        raise DataError("need at least two treatment groups")
    D = np.asarray(D)
    P, q, constant = _group_to_pooled(D, groups, sample.n)
    if improved:
        _add_pairwise(P, D, groups)
    return QuadraticProgram(P, q, [(idx, len(idx)) for _, idx in groups], constant)


def att_problem(sample: Sample, D) -> QuadraticProgram:
    """Control weights only: weighted control ECDF against the treated ECDF.

    The decision vector indexes the control units in row order.
    """
    require_binary(sample)
    ctrl = np.flatnonzero(sample.A == 0)
    trt = np.flatnonzero(sample.A == 1)
    if len(ctrl) < 1 or len(trt) < 1:
        raise DataError("ATT weights need at least one treated and one control unit")
    n0, n1 = len(ctrl), len(trt)
    D = np.asarray(D)
    P = -2.0 / n0**2 * D[np.ix_(ctrl, ctrl)]
    q = 2.0 / (n0 * n1) * D[np.ix_(ctrl, trt)].sum(axis=1)
    constant = -float(D[np.ix_(trt, trt)].sum()) / n1**2
    return QuadraticProgram(P, q, [(np.arange(n0), n0)], constant)


def audit_energies(sample: Sample, D, w, method: str) -> dict:
    """Recompute every objective term from the energy formulas (not from the QP)."""
    out = {}
    if method == "att":
        ctrl = sample.A == 0
        trt = sample.A == 1
        sub = np.flatnonzero(ctrl | trt)
        Dsub = D[np.ix_(sub, sub)]
        out["control_vs_treated"] = between_group_weighted_energy(
            Dsub, sample.A[sub], w[sub], 0, 1)
        return out
    labels = [int(a) for a in sample.labels]
    for a in labels:
        out[f"group{a}_vs_pooled"] = weighted_energy_distance(D, sample.A, w, a)
    if method in ("iebw", "multi_improved"):
        for a, b in itertools.combinations(labels, 2):
            out[f"group{a}_vs_group{b}"] = between_group_weighted_energy(D, sample.A, w, a, b)
    return out


def _clamp_and_renormalize(w, groups):
    w = np.where((w < 0) & (w >= -CLAMP), 0.0, w)
    if np.any(w < 0):
        raise RuntimeError("solver returned materially negative weights")
    for idx, s in groups:
        tot = w[idx].sum()
        if tot > 0:
            w[idx] *= s / tot
    return w


def solve_weights(problem: QuadraticProgram, sample: Sample, method: str, D=None,
                  tol: float = 1e-7, max_iter: int = 20000) -> BalancingWeights:
    """Solve ``problem`` and wrap the result as :class:`BalancingWeights` for ``sample``."""
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}'")
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    v = _clamp_and_renormalize(sol.w.copy(), problem.groups)
    if method == "att":
        w = np.ones(sample.n)
        w[sample.A == 0] = v
    else:
        w = v
    if D is None:
        D = distance_matrix(sample.X)
    bw = BalancingWeights(w=w, method=method, solver=sol,
                          energies=audit_energies(sample, D, w, method),
                          target_label=1 if method == "att" else None)
    if not bw.converged:
        warnings.warn(f"{method} solver status {sol.status} after {sol.iterations} iterations",
                      SolverWarning, stacklevel=2)
    if bw.a5_statistic() > 1.0:
        logger.info("max weight / n^(1/3) = %.3f exceeds 1", bw.a5_statistic())
    return bw


_BUILDERS = {
    "ebw": ebw_problem,
    "iebw": iebw_problem,
    "att": att_problem,
    "multi": lambda s, D: multi_problem(s, D, improved=False),
    "multi_improved": lambda s, D: multi_problem(s, D, improved=True),
}


def build_problem(sample: Sample, D, method: str) -> QuadraticProgram:
    try:
        return _BUILDERS[method](sample, D)
    except KeyError:
        raise ValueError(f"unknown method '{method}'") from None


def energy_balancing_weights(sample: Sample, method: str = "ebw", *, standardized: bool = False,
                             tol: float = 1e-7, max_iter: int = 20000) -> BalancingWeights:
    """Standardize covariates (unless already done), build and solve the ``method`` QP."""
    if method == "att":
        if np.sum(sample.A == 0) < 2:
            raise DataError("ATT weights need at least 2 control units")
    else:
        _groups(sample, min_size=2)
    if not standardized:
        sample, _ = standardize(sample)
    D = distance_matrix(sample.X)
    problem = build_problem(sample, D, method)
    return solve_weights(problem, sample, method, D=D, tol=tol, max_iter=max_iter)
