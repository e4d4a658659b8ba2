"""Analysis samples, covariate standardization and delimited-table ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when input data fails validation."""


ROLES = ("covariate", "treatment", "outcome", "ignore")


@dataclass(frozen=True)
class Sample:
    """Covariates ``X`` (n x p), treatment codes ``A`` and an optional outcome ``Y``.

    ``mu0``/``mu1`` hold simulation truth (conditional mean outcomes under
    control/treatment) when the sample was generated rather than observed.
    """

    X: np.ndarray
    A: np.ndarray
    Y: Optional[np.ndarray] = None
    names: tuple = ()
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        A_raw = np.asarray(self.A, dtype=float).ravel()
        if A_raw.shape[0] != X.shape[0]:
            raise DataError("X and A have different numbers of rows")
        if not np.all(np.isfinite(A_raw)):
            raise DataError("non-finite treatment")
        if np.any(A_raw != np.round(A_raw)):
            raise DataError("treatment codes must be integers")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite covariate value")
        n = X.shape[0]
        if n < 2:
            raise DataError("sample needs at least 2 rows")
        Y = self.Y
        if Y is not None:
            Y = np.asarray(Y, dtype=float).ravel()
            if Y.shape[0] != n:
                raise DataError("Y has the wrong length")
            if not np.all(np.isfinite(Y)):
                raise DataError("non-finite outcome")
        names = tuple(self.names) if self.names else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("names length does not match number of covariates")
        X.setflags(write=False)
        A = A_raw.astype(np.int64)
        A.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "labels", np.unique(A))
        for key in ("mu0", "mu1"):
            val = getattr(self, key)
            if val is not None:
                object.__setattr__(self, key, np.asarray(val, dtype=float).ravel())

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def group_sizes(self) -> dict:
        return {int(a): int(np.sum(self.A == a)) for a in self.labels}

    @property
    def is_binary(self) -> bool:
        return len(self.labels) == 2 and set(self.labels.tolist()) == {0, 1}

    def subset(self, idx) -> "Sample":
        """Rows ``idx`` (any integer index array, repeats allowed)."""
        idx = np.asarray(idx)
        pick = lambda v: None if v is None else v[idx]
        return Sample(self.X[idx], self.A[idx], pick(self.Y), self.names,
                      pick(self.mu0), pick(self.mu1))

    def with_X(self, X) -> "Sample":
        return replace(self, X=X)


def require_binary(sample: Sample) -> None:
    if not sample.is_binary:
        raise DataError(f"binary treatment coded {{0,1}} required, got labels {sample.labels.tolist()}")


@dataclass(frozen=True)
class Standardization:
    """Pooled column means and sample SDs (divisor n - 1)."""

    means: np.ndarray
    sds: np.ndarray
    ddof: int = 1

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.sds

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.sds + self.means


def standardize(sample: Sample, ddof: int = 1) -> tuple[Sample, Standardization]:
    """Center and scale every covariate on the pooled sample.

    ``ddof=1`` (sample SD) is the default; ``ddof=0`` gives population scaling.
    """
    X = sample.X
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=ddof)
    for j, sd in enumerate(sds):
        # relative check so large-offset constant columns are caught too
        if not sd > 1e-12 * max(1.0, abs(means[j])):
            raise DataError(f"covariate '{sample.names[j]}' has zero variance")
    std = Standardization(means, sds, ddof)
    Z = std.apply(X)
    # second pass removes the O(eps) residual mean left by the first
    Z -= Z.mean(axis=0)
    return sample.with_X(Z), std


def _sniff_delimiter(head: str) -> str:
    return "\t" if head.count("\t") > head.count(",") else ","


def _as_float(cell: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() in ("na", "nan", "null"):
        return float("nan")
    return float(cell)


def load_table(path, role_map: Mapping[str, str]) -> Sample:
    """Read a comma- or tab-delimited file with a header row into a :class:`Sample`.

    ``role_map`` maps column names to one of ``covariate``, ``treatment``,
    ``outcome`` or ``ignore``; columns not mentioned are ignored. Covariate
    columns that are not numeric are one-hot encoded with the first level (in
    order of appearance) dropped.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise DataError(f"{path}: empty file")
    delim = _sniff_delimiter(text.splitlines()[0])
    rows = list(csv.reader(text.splitlines(), delimiter=delim))
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    for k, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {k + 2} has {len(r)} fields, expected {len(header)}")

    for name, role in role_map.items():
        if role not in ROLES:
            raise DataError(f"unknown role '{role}' for column '{name}'")
        if name not in header:
            raise DataError(f"missing column '{name}'")
    treat = [c for c, r in role_map.items() if r == "treatment"]
    if len(treat) != 1:
        raise DataError("exactly one treatment column is required")
    outcome = [c for c, r in role_map.items() if r == "outcome"]
    if len(outcome) > 1:
        raise DataError("at most one outcome column is allowed")
    covs = [c for c in header if role_map.get(c) == "covariate"]
    if not covs:
        raise DataError("at least one covariate column is required")

    col = {h: [r[i] for r in body] for i, h in enumerate(header)}

    def numeric(name, what):
        try:
            return np.array([_as_float(c) for c in col[name]])
        except ValueError:
            raise DataError(f"non-numeric {what} cell in column '{name}'") from None

    A = numeric(treat[0], "treatment")
    if not np.all(np.isfinite(A)):
        raise DataError("non-finite treatment")
    Y = None
    if outcome:
        Y = numeric(outcome[0], "outcome")
        if not np.all(np.isfinite(Y)):
            raise DataError("non-finite outcome")

    blocks, names = [], []
    for name in covs:
        cells = [c.strip() for c in col[name]]
        try:
            vals = np.array([_as_float(c) for c in cells])
        except ValueError:
            vals = None
        if vals is not None:
            if not np.all(np.isfinite(vals)):
                raise DataError(f"non-finite value in covariate '{name}'")
            blocks.append(vals[:, None])
            names.append(name)
            continue
        if any(c == "" for c in cells):
            raise DataError(f"missing value in categorical covariate '{name}'")
        levels = list(dict.fromkeys(cells))
        for lev in levels[1:]:
            blocks.append(np.array([c == lev for c in cells], dtype=float)[:, None])
            names.append(f"{name}={lev}")
    if not blocks:
        raise DataError("categorical covariates with a single level leave no columns")
    return Sample(np.hstack(blocks), A, Y, tuple(names))


def write_table(path, header: Sequence[str], rows, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
