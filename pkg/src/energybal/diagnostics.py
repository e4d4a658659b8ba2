"""Balance diagnostics for arbitrary weight vectors."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Sample, require_binary, standardize
from .energy import between_group_weighted_energy, distance_matrix, normalize_weights, weighted_energy_distance

GRID_CAP = 200
EXACT_MAX = 5000


@dataclass
class BalanceReport:
    energy_two_term: float
    energy_three_term: float
    smd: np.ndarray
    smd2: np.ndarray
    rimse1: np.ndarray
    rimse2: np.ndarray
    weight_stats: dict
    smd2_terms: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "energy_two_term": self.energy_two_term,
            "energy_three_term": self.energy_three_term,
            "mean_abs_smd": float(np.mean(np.abs(self.smd))),
            "mean_abs_smd2": float(np.mean(np.abs(self.smd2))) if self.smd2.size else 0.0,
            "mean_rimse1": float(np.mean(self.rimse1)),
            "mean_rimse2": float(np.mean(self.rimse2)) if self.rimse2.size else 0.0,
        }
        out.update({f"weight_{k}": v for k, v in self.weight_stats.items()})
        return out


def _groups(sample, w):
    require_binary(sample)
    w = normalize_weights(sample.A, w)
    return w, sample.A == 1, sample.A == 0


def _smd_columns(F, A, w):
    sd = F.std(axis=0, ddof=1)
    if np.any(sd == 0):
        j = int(np.flatnonzero(sd == 0)[0])
        raise DataError(f"zero pooled SD for term {j}")
    t, c = A == 1, A == 0
    mt = w[t] @ F[t] / w[t].sum()
    mc = w[c] @ F[c] / w[c].sum()
    return (mt - mc) / sd


def smd(sample: Sample, w) -> np.ndarray:
    """Weighted treated-minus-control mean of each covariate over its unweighted pooled SD."""
    w, _, _ = _groups(sample, w)
    return _smd_columns(sample.X, sample.A, w)


def derived_terms(X, max_poly: int):
    """Powers ``x_j^k`` (k <= max_poly) and pairwise products ``x_j x_l`` (j < l), with labels."""
    p = X.shape[1]
    cols, names = [], []
    for j in range(p):
        for k in range(1, max_poly + 1):
            cols.append(X[:, j] ** k)
            names.append(f"x{j}^{k}")
    for j, l in itertools.combinations(range(p), 2):
        cols.append(X[:, j] * X[:, l])
        names.append(f"x{j}*x{l}")
    return np.column_stack(cols), names


def smd_derived(sample: Sample, w, max_poly: int = 2):
    """SMDs of polynomial and interaction terms built on the standardized covariates."""
    if max_poly < 1:
        raise ValueError("max_poly must be at least 1")
    w, _, _ = _groups(sample, w)
    ss, _ = standardize(sample)
    F, names = derived_terms(ss.X, max_poly)
    return _smd_columns(F, sample.A, w), names


def _wecdf(x, w, nodes):
    order = np.argsort(x, kind="stable")
    xs, cw = x[order], np.cumsum(w[order])
    idx = np.searchsorted(xs, nodes, side="right")
    return np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0) / cw[-1]


def _step_weights(nodes):
    # ECDFs are right-continuous steps, so the left-endpoint rule is exact
    out = np.zeros(len(nodes))
    out[:-1] = np.diff(nodes)
    return out


def rimse_1d(sample: Sample, w) -> np.ndarray:
    """Root integrated squared difference of the weighted treated and control ECDFs, per covariate.

    Evaluated exactly on the pooled sorted values (the integrand is a step function).
    """
    w, t, c = _groups(sample, w)
    out = np.empty(sample.p)
    for j in range(sample.p):
        x = sample.X[:, j]
        nodes = np.unique(x)
        if len(nodes) < 2:
            out[j] = 0.0
            continue
        diff = _wecdf(x[t], w[t], nodes) - _wecdf(x[c], w[c], nodes)
        out[j] = np.sqrt(float(np.sum(diff**2 * _step_weights(nodes))))
    return out


def _exact_sq_integral(x, y, c, chunk=1024):
    """Exact integral of G(s, t)^2 over the pooled bounding box, G = sum_i c_i 1{x_i <= s, y_i <= t}.

    Uses int 1{s >= max(x_i, x_j)} ds = xmax - max(x_i, x_j) (and likewise in t),
    so the result is a double sum; rows are processed in chunks to bound memory.
    """
    xm, ym = x.max(), y.max()
    tot = 0.0
    for lo in range(0, len(x), chunk):
        sl = slice(lo, lo + chunk)
        K = (xm - np.maximum.outer(x[sl], x)) * (ym - np.maximum.outer(y[sl], y))
        tot += float(c[sl] @ K @ c)
    return max(tot, 0.0)


def _overlap(x, g):
    # length of [x_i, inf) inside each grid cell [g_k, g_{k+1})
    return np.clip(g[1:][None, :] - np.maximum(g[:-1][None, :], x[:, None]), 0.0, None)


def _projected_sq_integral(x, y, c, cap):
    """L2 projection of G onto a cap x cap quantile grid (a lower bound on the exact value)."""
    gx = np.unique(np.quantile(x, np.linspace(0, 1, cap)))
    gy = np.unique(np.quantile(y, np.linspace(0, 1, cap)))
    cell = _overlap(x, gx).T @ (c[:, None] * _overlap(y, gy))
    area = np.outer(np.diff(gx), np.diff(gy))
    return float(np.sum(cell**2 / area))


def rimse_2d(sample: Sample, w, cap: int = GRID_CAP, exact_max: int = EXACT_MAX):
    """Bivariate ECDF RIMSE for every covariate pair.

    Exact for ``n <= exact_max``; larger samples use a ``cap`` x ``cap``
    quantile grid (cell averages of the ECDF difference).
    """
    w, t, c_ = _groups(sample, w)
    c = np.where(t, w / w[t].sum(), -w / w[c_].sum())
    exact = sample.n <= exact_max
    vals, pairs = [], []
    for j, l in itertools.combinations(range(sample.p), 2):
        x, y = sample.X[:, j], sample.X[:, l]
        pairs.append((j, l))
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            vals.append(0.0)
        elif exact:
            vals.append(np.sqrt(_exact_sq_integral(x, y, c)))
        else:
            vals.append(np.sqrt(_projected_sq_integral(x, y, c, cap)))
    return np.array(vals), pairs


def sup_ecdf_difference(x, A, w, a) -> float:
    """sup_x |F_{n,a,w}(x) - F_n(x)| for a single covariate."""
    x = np.asarray(x, dtype=float)
    A = np.asarray(A)
    w = normalize_weights(A, w)
    m = A == a
    nodes = np.unique(x)
    Fa = _wecdf(x[m], w[m], nodes)
    Fn = _wecdf(x, np.ones(len(x)), nodes)
    return float(np.max(np.abs(Fa - Fn)))


def weight_stats(w) -> dict:
    w = np.asarray(w, dtype=float)
    return {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean()),
            "sd": float(w.std(ddof=1)) if len(w) > 1 else 0.0,
            "a5": float(w.max() / len(w) ** (1 / 3))}


def balance_report(sample: Sample, w, *, max_poly: int = 2, pairs: bool = True,
                   standardized: bool = False) -> BalanceReport:
    """All balance diagnostics for ``w``; energies use standardized covariates."""
    w, _, _ = _groups(sample, w)
    ss = sample if standardized else standardize(sample)[0]
    D = distance_matrix(ss.X)
    two = sum(weighted_energy_distance(D, sample.A, w, a).value for a in (0, 1))
    three = two + between_group_weighted_energy(D, sample.A, w, 1, 0)
    s2, names = smd_derived(sample, w, max_poly)
    r2, pr = rimse_2d(sample, w) if pairs else (np.zeros(0), [])
    return BalanceReport(energy_two_term=float(two), energy_three_term=float(three),
                         smd=smd(sample, w), smd2=s2, rimse1=rimse_1d(sample, w), rimse2=r2,
                         weight_stats=weight_stats(w), smd2_terms=names, pairs=pr)
