"""Pairwise distances and (weighted) energy distances.

All weighted quantities take a precomputed :func:`distance_matrix` so that
the O(n^2) distance work is done once per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import sici

SUM_TOL = 1e-8


@dataclass(frozen=True)
class EnergyBreakdown:
    """Components of the energy distance between a weighted group ECDF and the pooled ECDF."""

    cross: float
    within_weighted: float
    within_pooled: float

    @property
    def value(self) -> float:
        return self.cross - self.within_weighted - self.within_pooled


def distance_matrix(X) -> np.ndarray:
    """Dense symmetric matrix of Euclidean distances between the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input to distance_matrix")
    D = cdist(X, X)
    # cdist is symmetric up to rounding in the summation order; force it exactly
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def energy_distance(Za, Zb) -> float:
    """Plain empirical energy distance between two samples."""
    Za = np.atleast_2d(np.asarray(Za, dtype=float).T).T
    Zb = np.atleast_2d(np.asarray(Zb, dtype=float).T).T
    if Za.shape[0] == 0 or Zb.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    if Za.shape[1] != Zb.shape[1]:
        raise ValueError(f"dimension mismatch: {Za.shape[1]} vs {Zb.shape[1]}")
    return float(2.0 * cdist(Za, Zb).mean() - cdist(Za, Za).mean() - cdist(Zb, Zb).mean())


def normalize_weights(A, w) -> np.ndarray:
    """Rescale ``w`` within every treatment group so group ``a`` sums to ``n_a``."""
    A = np.asarray(A)
    w = np.asarray(w, dtype=float).copy()
    if np.any(w < 0):
        raise ValueError("negative weight")
    for a in np.unique(A):
        m = A == a
        s = w[m].sum()
        if not s > 0:
            raise ValueError(f"weights in group {a} are all zero")
        w[m] *= m.sum() / s
    return w


def _check_group(A, w, a):
    m = np.asarray(A) == a
    na = int(m.sum())
    if na == 0:
        raise ValueError(f"group {a} is empty")
    if np.any(w < 0):
        raise ValueError("negative weight")
    if abs(w[m].sum() - na) > SUM_TOL * max(1, na):
        raise ValueError(f"weights in group {a} sum to {w[m].sum()!r}, expected {na}; "
                         "use normalize_weights first")
    return m, na


def weighted_energy_distance(D, A, w, a) -> EnergyBreakdown:
    """Energy distance between the ``w``-weighted ECDF of group ``a`` and the pooled ECDF."""
    D = np.asarray(D)
    w = np.asarray(w, dtype=float)
    m, na = _check_group(A, w, a)
    n = D.shape[0]
    wa = w[m]
    Da = D[m]
    cross = 2.0 / (na * n) * float(wa @ Da.sum(axis=1))
    within_w = float(wa @ Da[:, m] @ wa) / na**2
    within_p = float(D.sum()) / n**2
    return EnergyBreakdown(cross, within_w, within_p)


def between_group_weighted_energy(D, A, w, a, b) -> float:
    """Energy distance between the weighted ECDFs of groups ``a`` and ``b``."""
    if a == b:
        raise ValueError("groups must differ")
    D = np.asarray(D)
    w = np.asarray(w, dtype=float)
    ma, na = _check_group(A, w, a)
    mb, nb = _check_group(A, w, b)
    wa, wb = w[ma], w[mb]
    cross = 2.0 / (na * nb) * float(wa @ D[np.ix_(ma, mb)] @ wb)
    return cross - float(wa @ D[np.ix_(ma, ma)] @ wa) / na**2 - float(wb @ D[np.ix_(mb, mb)] @ wb) / nb**2


# ---------------------------------------------------------------------------
# characteristic-function quadrature (test oracle)


def _line_integral(y, c, T, n_points, eps0):
    """(1/pi) * int_R |sum_k c_k exp(i s y_k)|^2 / s^2 ds for signed atoms with sum(c) == 0.

    Trapezoid on [eps0, T] (the integrand is even in s); the tail beyond T is
    integrated exactly term by term with the sine integral.
    """
    s = np.linspace(eps0, T, n_points)
    phase = np.outer(s, y)
    re = np.cos(phase) @ c
    im = np.sin(phase) @ c
    f = (re * re + im * im) / s**2
    core = np.trapezoid(f, s)
    # [0, eps0]: integrand ~ (sum c y)^2 near zero
    core += eps0 * float(c @ y) ** 2
    delta = np.abs(y[:, None] - y[None, :])
    cc = np.outer(c, c)
    x = delta * T
    si, _ = sici(np.where(x > 0, x, 1.0))
    tail_terms = np.where(x > 0, np.cos(x) / T - delta * (np.pi / 2 - si), 1.0 / T)
    tail = float(np.sum(cc * tail_terms))
    return 2.0 * (core + tail) / np.pi


def _echf_energy(X, c, T, n_points, n_angles, eps0):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    if p == 1:
        return _line_integral(X[:, 0], c, T, n_points, eps0)
    if p == 2:
        # polar slicing: t = s * u(theta), theta in [0, pi), s in R.  With
        # omega = 1 / (2 pi |t|^3) the 2-d integral is (1/2) * int_0^pi of the
        # 1-d line integral of the projected atoms.
        theta = (np.arange(n_angles) + 0.5) * np.pi / n_angles
        vals = [_line_integral(X @ np.array([np.cos(t), np.sin(t)]), c, T, n_points, eps0)
                for t in theta]
        return 0.5 * np.pi * float(np.mean(vals))
    raise ValueError(f"characteristic-function oracle supports p <= 2, got p={p}")


def echf_integral(X, A, w, a, b=None, *, T=50.0, n_points=4000, n_angles=400, eps0=1e-4) -> float:
    """Weighted energy distance evaluated as int |phi_1 - phi_2|^2 omega(t) dt by quadrature.

    With ``b=None`` the comparison is weighted group ``a`` against the pooled
    sample; otherwise weighted group ``a`` against weighted group ``b``.
    Only meant as an independent cross-check of the closed-form sums.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] > 2:
        raise ValueError(f"characteristic-function oracle supports p <= 2, got p={X.shape[1]}")
    A = np.asarray(A)
    w = np.asarray(w, dtype=float)
    n = len(A)
    ma = A == a
    c = np.where(ma, w, 0.0) / ma.sum()
    if b is None:
        c = np.full(n, 1.0 / n) - c
    else:
        mb = A == b
        c = c - np.where(mb, w, 0.0) / mb.sum()
    return _echf_energy(X, c, T, n_points, n_angles, eps0)
