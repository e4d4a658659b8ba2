"""Weighted (Hajek) treatment-effect estimators, logistic-regression IPW and the bootstrap."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import DataError, Sample, require_binary

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimateResult:
    point: float
    method: str
    estimand: str = "ate"
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    B: Optional[int] = None
    redraws: int = 0
    solver_failures: int = 0

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _group_mean(Y, w, mask, label):
    ws = w[mask]
    tot = ws.sum()
    if not tot > 0:
        raise DataError(f"weights in group {label} are all zero")
    return float(ws @ Y[mask] / tot)


def _check(sample: Sample, w):
    if sample.Y is None:
        raise DataError("outcome column required")
    w = np.asarray(w, dtype=float)
    if w.shape != (sample.n,):
        raise DataError(f"expected {sample.n} weights, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be finite and nonnegative")
    return w


def weighted_contrast(sample: Sample, w, a, b) -> float:
    """Difference of within-group weighted means of ``Y`` between groups ``a`` and ``b``."""
    w = _check(sample, w)
    for lab in (a, b):
        if lab not in sample.labels:
            raise DataError(f"label {lab} not present")
    return (_group_mean(sample.Y, w, sample.A == a, a)
            - _group_mean(sample.Y, w, sample.A == b, b))


def weighted_ate(sample: Sample, w) -> float:
    """Hajek-normalized weighted difference in means, treated minus control."""
    require_binary(sample)
    return weighted_contrast(sample, w, 1, 0)


def weighted_att(sample: Sample, w) -> float:
    """Unweighted treated mean minus weighted control mean (treated weights are 1)."""
    require_binary(sample)
    w = _check(sample, w).copy()
    w[sample.A == 1] = 1.0
    return weighted_contrast(sample, w, 1, 0)


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _loglik(eta, A):
    return float(np.sum(A * eta - np.logaddexp(0.0, eta)))


def fit_logistic(F, A, max_iter: int = 100, tol: float = 1e-10, history: Optional[list] = None):
    """Logistic regression of ``A`` on design ``F`` by IRLS with step halving.

    Returns the coefficient vector. Raises :class:`ConvergenceError` when the
    coefficients diverge (separation) or IRLS fails to converge.
    """
    F = np.asarray(F, dtype=float)
    A = np.asarray(A, dtype=float)
    beta = np.zeros(F.shape[1])
    ll = _loglik(F @ beta, A)
    if history is not None:
        history.append(ll)
    for _ in range(max_iter):
        eta = F @ beta
        pi = _expit(eta)
        W = np.maximum(pi * (1 - pi), 1e-12)
        grad = F.T @ (A - pi)
        H = F.T @ (F * W[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            new = beta + t * step
            new_ll = _loglik(F @ new, A)
            if new_ll >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        beta, ll_old, ll = new, ll, new_ll
        if history is not None:
            history.append(ll)
        if np.linalg.norm(beta) > 1e6:
            raise ConvergenceError("logistic regression diverged (perfect separation?)")
        if np.max(np.abs(t * step)) < tol or abs(ll - ll_old) < tol * (abs(ll) + tol):
            return beta
    # under separation |beta| grows only logarithmically, so also test for saturated fits
    resid = np.abs(A - _expit(F @ beta))
    if np.linalg.norm(beta) > 1e3 or resid.max() < 1e-6:
        raise ConvergenceError("logistic regression did not converge; coefficients diverging")
    logger.warning("IRLS reached %d iterations without meeting tol", max_iter)
    return beta


def propensity_scores(sample: Sample, features=None) -> np.ndarray:
    """Fitted P(A=1 | X) from a main-effects logistic model (or a supplied design)."""
    require_binary(sample)
    Fx = sample.X if features is None else np.asarray(features, dtype=float)
    sd = Fx.std(axis=0)
    sd[sd == 0] = 1.0
    F = np.column_stack([np.ones(sample.n), (Fx - Fx.mean(axis=0)) / sd])
    beta = fit_logistic(F, sample.A)
    return _expit(F @ beta)


def logistic_ipw_weights(sample: Sample, features=None) -> np.ndarray:
    """Inverse-propensity weights normalized to sum to n_a within each group."""
    pi = propensity_scores(sample, features)
    A = sample.A
    n1 = A.sum()
    n0 = sample.n - n1
    w = 1.0 / np.where(A == 1, pi / n1, (1 - pi) / n0)
    for a, na in ((1, n1), (0, n0)):
        m = A == a
        w[m] *= na / w[m].sum()
    return w


# ---------------------------------------------------------------------------
# bootstrap

def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _resample(sample: Sample, rng, need_labels, max_redraws=100):
    redraws = 0
    while True:
        idx = rng.integers(0, sample.n, sample.n)
        A = sample.A[idx]
        counts = [np.sum(A == a) for a in need_labels]
        if min(counts) >= 2:
            return idx, redraws
        redraws += 1
        if redraws > max_redraws:
            raise DataError("more than 100 consecutive bootstrap draws left a treatment group empty")


def bootstrap(sample: Sample, estimator: Callable[[Sample], tuple], *, B: int = 1000, seed: int,
              method: str = "", estimand: str = "ate", jobs: int = 1) -> EstimateResult:
    """Nonparametric bootstrap of ``estimator``, re-estimating weights on every resample.

    ``estimator(sample) -> (estimate, converged)``. Replicate ``b`` draws from
    its own RNG stream keyed by ``(seed, b)``, so results do not depend on
    ``jobs``. Resamples leaving any group with fewer than two units are redrawn.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    point, _ = estimator(sample)
    labels = sample.labels

    def one(b):
        idx, redraws = _resample(sample, _rng(seed, b), labels)
        est, ok = estimator(sample.subset(idx))
        return est, redraws, ok

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(one, range(B)))
    else:
        out = [one(b) for b in range(B)]
    reps = np.array([o[0] for o in out])
    lo, hi = np.percentile(reps, [2.5, 97.5])
    return EstimateResult(point=float(point), method=method, estimand=estimand,
                          se=float(reps.std(ddof=1)), ci_low=float(lo), ci_high=float(hi), B=B,
                          redraws=int(sum(o[1] for o in out)),
                          solver_failures=int(sum(not o[2] for o in out)))


WEIGHT_METHODS = ("unweighted", "ipw", "ebw", "iebw", "att", "multi", "multi_improved")


def compute_weights(sample: Sample, method: str, *, standardized: bool = False):
    """Weights for ``method`` on ``sample``; returns ``(w, converged)``.

    ``unweighted`` and ``ipw`` never involve the QP solver and always report
    converged.
    """
    from .balancing import energy_balancing_weights
    from .data import standardize

    if method not in WEIGHT_METHODS:
        raise ValueError(f"unknown weight method '{method}'")
    if method == "unweighted":
        return np.ones(sample.n), True
    if not standardized:
        sample, _ = standardize(sample)
    if method == "ipw":
        return logistic_ipw_weights(sample), True
    bw = energy_balancing_weights(sample, method, standardized=True)
    return bw.w, bw.converged


def point_estimate(sample: Sample, w, estimand: str = "ate", contrast=None) -> float:
    if estimand == "ate":
        return weighted_ate(sample, w)
    if estimand == "att":
        return weighted_att(sample, w)
    if estimand == "contrast":
        if contrast is None:
            raise ValueError("contrast estimand needs a (a, b) label pair")
        return weighted_contrast(sample, w, *contrast)
    raise ValueError(f"unknown estimand '{estimand}'")


def bootstrap_estimate(sample: Sample, method: str, estimand: str = "ate", *, B: int = 1000,
                       seed: int, contrast=None, jobs: int = 1) -> EstimateResult:
    """Bootstrap a weighted estimator, re-solving ``method`` weights on every resample."""
    if estimand == "att" and method not in ("att", "unweighted", "ipw"):
        logger.info("ATT estimand with %s weights: treated weights are replaced by 1", method)

    def estimator(s):
        w, ok = compute_weights(s, method)
        return point_estimate(s, w, estimand, contrast), ok

    return bootstrap(sample, estimator, B=B, seed=seed, method=method, estimand=estimand, jobs=jobs)
