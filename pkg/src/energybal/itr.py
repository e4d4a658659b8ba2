"""Individualized treatment rules learned from weighted, outcome-weighted surrogate losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DataError, Sample, require_binary
from .estimation import ConvergenceError

logger = logging.getLogger(__name__)

LOSSES = ("logistic", "hinge")


@dataclass(frozen=True)
class LinearRule:
    beta: np.ndarray
    intercept: float
    loss: str = "logistic"
    lam: float = 0.0
    shift: float = 0.0  # amount added to Y before fitting
    iterations: int = 0

    def score(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta + self.intercept

    def decide(self, X) -> np.ndarray:
        """1 (treat) where the linear score is >= 0, else 0."""
        return (self.score(X) >= 0).astype(np.int64)


def _logistic_loss(u):
    return np.logaddexp(0.0, -u)


def _logistic_dloss(u):
    # d/du log(1 + exp(-u)) = -1 / (1 + exp(u))
    return -0.5 * (1.0 - np.tanh(0.5 * u))


def itr_objective(theta, F, s, c, lam, loss="logistic"):
    """(1/n) sum c_i phi(s_i f_i) + lam ||beta||^2 with f = F theta.

    ``F`` has the intercept column last; the intercept is not penalized.
    """
    u = s * (F @ theta)
    beta = theta[:-1]
    if loss == "logistic":
        val = np.mean(c * _logistic_loss(u))
    else:
        val = np.mean(c * np.maximum(0.0, 1.0 - u))
    return float(val + lam * beta @ beta)


def itr_gradient(theta, F, s, c, lam, loss="logistic"):
    u = s * (F @ theta)
    if loss == "logistic":
        d = _logistic_dloss(u)
    else:
        d = np.where(u < 1.0, -1.0, 0.0)
    g = F.T @ (c * s * d) / len(s)
    g[:-1] += 2.0 * lam * theta[:-1]
    return g


def _hessian(theta, F, s, c, lam):
    u = s * (F @ theta)
    curv = 0.25 / np.cosh(0.5 * u) ** 2  # phi''(u) for the logistic loss
    H = F.T @ (F * (c * curv)[:, None]) / len(s)
    H[np.arange(len(theta) - 1), np.arange(len(theta) - 1)] += 2.0 * lam
    return H


def _newton(theta, F, s, c, lam, tol, max_iter):
    """Damped Newton with Armijo backtracking on the (smooth, convex) logistic objective."""
    f = itr_objective(theta, F, s, c, lam)
    for it in range(max_iter):
        g = itr_gradient(theta, F, s, c, lam)
        if np.linalg.norm(g) <= tol:
            return theta, it
        H = _hessian(theta, F, s, c, lam)
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(len(g)), g)
        except np.linalg.LinAlgError:
            step = g
        if step @ g <= 0:
            step = g
        t = 1.0
        while True:
            cand = theta - t * step
            fc = itr_objective(cand, F, s, c, lam)
            if fc <= f - 1e-4 * t * float(g @ step) or t < 1e-12:
                break
            t *= 0.5
        theta, f = cand, fc
    raise ConvergenceError(f"ITR optimization did not reach tol {tol} in {max_iter} iterations")


def _subgradient(theta, F, s, c, lam, max_iter):
    best, fbest = theta, itr_objective(theta, F, s, c, lam, "hinge")
    scale = 1.0 / max(float(np.mean(c)), 1e-12)
    stall = 0
    for it in range(1, max_iter + 1):
        g = itr_gradient(theta, F, s, c, lam, "hinge")
        theta = theta - scale / np.sqrt(it) * g
        f = itr_objective(theta, F, s, c, lam, "hinge")
        if f < fbest - 1e-12 * max(1.0, abs(fbest)):
            best, fbest, stall = theta, f, 0
        else:
            stall += 1
            if stall >= 2000:
                break
    return best, it


def fit_itr(sample: Sample, w, loss: str = "logistic", lam=None, *, features=None,
            group_scale: bool = True, tol: float = 1e-7, max_iter: int = 50_000) -> LinearRule:
    """Linear rule minimizing the weighted outcome-weighted surrogate loss.

    Minimizes ``(1/n) sum Y_i w_i phi((2A_i - 1) f(X_i)) + lam ||beta||^2``
    over ``f(x) = x'beta + b``; ``lam`` defaults to ``1/n``. Outcomes are
    shifted by ``-min(Y)`` when any is negative (recorded in ``shift``).

    With ``group_scale`` the weights of group ``a`` are rescaled by ``n / w_a``
    (``w_a`` the group's weight total), so each group stands for the whole
    population as ``1 / pi(A, X)`` does; group-normalized balancing weights
    otherwise tilt the rule towards the larger group.
    """
    require_binary(sample)
    if sample.Y is None:
        raise DataError("outcome column required")
    if loss not in LOSSES:
        raise ValueError(f"unknown loss '{loss}'")
    w = np.asarray(w, dtype=float)
    if w.shape != (sample.n,) or np.any(w < 0):
        raise DataError("weights must be a nonnegative vector with one entry per row")
    n = sample.n
    lam = 1.0 / n if lam is None else float(lam)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if group_scale:
        w = w.copy()
        for a in (0, 1):
            m = sample.A == a
            tot = w[m].sum()
            if not tot > 0:
                raise DataError(f"weights in group {a} are all zero")
            w[m] *= n / tot
    Y = sample.Y
    shift = 0.0
    if Y.min() < 0:
        shift = -float(Y.min())
        logger.info("outcomes shifted by %.6g to be nonnegative", shift)
    Fx = sample.X if features is None else np.asarray(features, dtype=float)
    F = np.column_stack([Fx, np.ones(n)])
    s = 2.0 * sample.A - 1.0
    c = (Y + shift) * w
    theta = np.zeros(F.shape[1])
    if loss == "logistic":
        theta, it = _newton(theta, F, s, c, lam, tol, max_iter)
    else:
        theta, it = _subgradient(theta, F, s, c, lam, max_iter)
    return LinearRule(beta=theta[:-1].copy(), intercept=float(theta[-1]), loss=loss, lam=lam,
                      shift=shift, iterations=it)


def evaluate_value(rule: LinearRule, sample: Sample) -> float:
    """Mean of mu_{d(x)}(x) over the rows of an oracle sample."""
    if sample.mu0 is None or sample.mu1 is None:
        raise DataError("value evaluation needs mu0 and mu1 columns")
    d = rule.decide(sample.X)
    return float(np.mean(np.where(d == 1, sample.mu1, sample.mu0)))


def misclassification(rule: LinearRule, sample: Sample) -> float:
    """Share of rows where the rule disagrees with the optimal I(mu1 > mu0)."""
    if sample.mu0 is None or sample.mu1 is None:
        raise DataError("misclassification needs mu0 and mu1 columns")
    return float(np.mean(rule.decide(sample.X) != (sample.mu1 > sample.mu0)))
