"""Synthetic data generators and the Monte-Carlo comparison harness.

Covariate setups, propensity models I-VI and outcome models A-E follow the
benchmark design used for the ATE comparisons; toy scenarios 1-3 are the
one-dimensional bias/imbalance examples, and ITR scenarios 1-2 are the
treatment-rule examples with known potential-outcome means.

In covariate setup 2 the analyst observes nonlinear transforms ``X`` of a
latent Gaussian ``Z`` while treatment and outcome are generated from ``Z``
(as in the Kang-Schafer design); in setup 1 ``X == Z``.
"""

from __future__ import annotations

import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Sample, standardize
from .energy import distance_matrix

logger = logging.getLogger(__name__)

PROPENSITY_MODELS = ("I", "II", "III", "IV", "V", "VI")
OUTCOME_MODELS = ("A", "B", "C", "D", "E")
MIN_P = {"I": 4, "II": 4, "III": 8, "IV": 4, "V": 5, "VI": 8,
         "A": 4, "B": 4, "C": 5, "D": 7, "E": 4}
BETA_D = np.array([0.8, 0.25, 0.6, -0.4, -0.8, -0.5, 0.7])
MC_METHODS = ("unweighted", "ipw", "ebw", "iebw")


class ScenarioError(ValueError):
    pass


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible stream for ``(seed, *key)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class ScenarioSpec:
    propensity: str = "I"
    outcome: str = "A"
    n: int = 250
    p: int = 10
    seed: int = 0
    covariate_setup: int = field(init=False)

    def __post_init__(self):
        if self.propensity not in PROPENSITY_MODELS:
            raise ScenarioError(f"unknown propensity model '{self.propensity}'")
        if self.outcome not in OUTCOME_MODELS:
            raise ScenarioError(f"unknown outcome model '{self.outcome}'")
        need = max(MIN_P[self.propensity], MIN_P[self.outcome])
        setup = 2 if (self.propensity == "III" or self.outcome in ("B", "E")) else 1
        if setup == 2:
            need = max(need, 8)
        if self.p < need:
            raise ScenarioError(f"propensity {self.propensity} / outcome {self.outcome} "
                                f"(setup {setup}) need p >= {need}, got {self.p}")
        if self.n < 4:
            raise ScenarioError("n must be at least 4")
        object.__setattr__(self, "covariate_setup", setup)


def covariance(p: int) -> np.ndarray:
    k = np.arange(p)
    return (-0.75) ** np.abs(k[:, None] - k[None, :])


@functools.lru_cache(maxsize=None)
def _chol(p: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(covariance(p))
    except np.linalg.LinAlgError:
        raise ScenarioError(f"covariance is not positive definite at p={p}") from None


def setup2_transform(Z: np.ndarray) -> np.ndarray:
    X = Z.copy()
    z = [None] + [Z[:, j] for j in range(8)]  # 1-based
    X[:, 0] = np.exp(z[1] / 2)
    X[:, 1] = z[2] / (1 + np.exp(z[1])) + 10
    X[:, 2] = (z[1] * z[3] / 25 + 0.6) ** 3
    X[:, 3] = 20 + (z[2] + z[4]) ** 2
    X[:, 4] = np.exp(z[5] / 2)
    X[:, 5] = z[6] / (1 + np.exp(z[5])) + 10
    X[:, 6] = (z[1] * z[7] / 25 + 0.6) ** 3
    X[:, 7] = 5 + (z[6] + z[8]) ** 2
    return X


def gen_covariates(n: int, p: int, setup: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(X, Z)``: observed covariates and the latent Gaussian draw."""
    if setup == 2 and p < 8:
        raise ScenarioError("covariate setup 2 needs p >= 8")
    Z = rng.standard_normal((n, p)) @ _chol(p).T
    X = setup2_transform(Z) if setup == 2 else Z
    return X, Z


def _ind(*conds):
    out = conds[0]
    for c in conds[1:]:
        out = out & c
    return out.astype(float)


def propensity_logit(model: str, Z: np.ndarray) -> np.ndarray:
    """Linear predictor of P(A=1) for propensity model ``model`` (uncalibrated for IV)."""
    x = [None] + [Z[:, j] for j in range(min(Z.shape[1], 8))]
    a = [None] + [np.abs(v) for v in x[1:]]
    if model == "I":
        return (2 * x[1] * x[2] * _ind(a[1] > 1, a[2] > 1)
                + 2 * x[2] * x[3] * _ind(a[2] < 1, a[3] < 1)
                + 2 * x[3] * x[4] * _ind(a[3] > 1, a[4] > 1)
                + 2 * x[4] * x[1] * _ind(a[1] < 1, a[4] < 1)
                + _ind(a[1] > 0.5, a[2] > 0.5, a[3] > 0.5, a[4] > 0.5)
                + _ind(a[1] < 0.25, a[2] > 0.25, a[3] < 0.25, a[4] > 0.25))
    if model == "II":
        return (-2 + np.log(np.abs(x[1] - x[2])) - np.log(np.abs(x[2] - x[3]))
                + np.sqrt(np.abs((x[3] - x[4]) * x[1] * x[2])))
    if model == "III":
        return (-x[1] + 0.5 * x[2] - 0.25 * x[3] - 0.1 * x[4]
                - x[5] + 0.5 * x[6] - 0.25 * x[7] - 0.1 * x[8])
    if model == "IV":
        eta = np.zeros(Z.shape[0])
        for i in range(1, 4):
            for j in range(i, 5):
                eta += (-1) ** (2 * j - i) * x[i] * x[j]
        return eta
    if model == "V":
        return -2 + 2 * x[1] * x[2] + (x[1] - x[2]) ** 2 - 2 * x[3] * x[4] - (x[3] + x[5]) ** 2
    if model == "VI":
        return (np.abs(x[1] - 2 * x[2]) * np.abs(x[2] - 2 * x[3])
                - np.abs(x[3] - 2 * x[4]) * np.abs(x[4] - 2 * x[5])
                + x[6] - 0.5 * x[7] - 0.25 * x[8])
    raise ScenarioError(f"unknown propensity model '{model}'")


def gen_treatment(model: str, Z: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli treatment draws; returns ``(A, eta)``.

    Model IV rescales its linear predictor so the sample SD of ``eta`` is 5.
    """
    eta = propensity_logit(model, Z)
    if model == "IV":
        sd = eta.std(ddof=1)
        eta = eta * (5.0 / sd) if sd > 0 else eta
    pi = 0.5 * (1 + np.tanh(0.5 * eta))
    A = (rng.random(Z.shape[0]) < pi).astype(np.int64)
    return A, eta


def outcome_mean(model: str, Z: np.ndarray, A) -> np.ndarray:
    """Conditional mean E[Y | covariates, A] for outcome model ``model``."""
    A = np.broadcast_to(np.asarray(A, dtype=float), (Z.shape[0],))
    x = [None] + [Z[:, j] for j in range(min(Z.shape[1], 8))]
    if model == "A":
        return 210 + 27.4 * np.abs(x[1]) + 13.7 * (np.abs(x[2]) + np.abs(x[3]) + np.abs(x[4]))
    if model == "B":
        return x[1] * x[2] ** 3 * x[3] ** 2 * x[4] + x[4] * np.sqrt(np.abs(x[1]))
    if model == "C":
        return 2 * sum((1 - x[j] * (x[j] > 0) * A) * (x[j] - 2 * x[j + 1]) for j in range(1, 5))
    if model == "D":
        b = [None] + list(BETA_D)
        return (sum(x[j] * b[j] for j in range(1, 8))
                + b[2] * x[2] ** 2 + b[4] * x[4] ** 2 + b[7] * x[7] ** 2
                + 0.5 * b[1] * x[1] * x[3] + 0.7 * b[2] * x[2] * x[4] + 0.5 * b[3] * x[3] * x[5]
                + 0.7 * b[4] * x[4] * x[6] + 0.5 * b[5] * x[5] * x[7] + 0.5 * b[1] * x[1] * x[6]
                + 0.7 * b[2] * x[2] * x[3] + 0.5 * b[3] * x[3] * x[4] + 0.5 * b[4] * x[4] * x[5]
                + 0.5 * b[5] * x[5] * x[6])
    if model == "E":
        return 210 + (1.5 * A - 0.5) * (27.4 * x[1] + 13.7 * x[2] + 13.7 * x[3] + 13.7 * x[4])
    raise ScenarioError(f"unknown outcome model '{model}'")


def gen_outcome(model: str, Z: np.ndarray, A, rng) -> np.ndarray:
    return outcome_mean(model, Z, A) + rng.standard_normal(Z.shape[0])


def generate(spec: ScenarioSpec, rep: int = 0) -> Sample:
    """One dataset for ``spec``; replicate ``rep`` uses its own RNG stream."""
    rng = rng_for(spec.seed, rep)
    X, Z = gen_covariates(spec.n, spec.p, spec.covariate_setup, rng)
    A, _ = gen_treatment(spec.propensity, Z, rng)
    Y = gen_outcome(spec.outcome, Z, A, rng)
    return Sample(X, A, Y, mu0=outcome_mean(spec.outcome, Z, 0), mu1=outcome_mean(spec.outcome, Z, 1))


@functools.lru_cache(maxsize=None)
def true_ate(outcome: str, p: int, setup: int, draws: int = 1_000_000, seed: int = 20240101):
    """Monte-Carlo truth ``(tau, mc_se)`` for an outcome model under a covariate setup."""
    rng = rng_for(seed, 0)
    diffs = []
    chunk = 200_000
    for start in range(0, draws, chunk):
        m = min(chunk, draws - start)
        _, Z = gen_covariates(m, p, setup, rng)
        diffs.append(outcome_mean(outcome, Z, 1) - outcome_mean(outcome, Z, 0))
    d = np.concatenate(diffs)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d)))


# ---------------------------------------------------------------------------
# toy and ITR scenarios

def toy_logit(which: int, x):
    if which == 1:
        return -1 + x
    if which == 2:
        return -1 + x + 2 * x**2 / 3
    if which == 3:
        return -1 + x + 2 * x**2 / 3 - x**3 / 3
    raise ScenarioError(f"toy scenario must be 1, 2 or 3, got {which}")


def toy_mean(x):
    return x + x**3 - 1 / (0.1 + 0.1 * x**2)


def toy_scenario(which: int, n: int, seed: int, rep: int = 0) -> Sample:
    """One-covariate example; the outcome does not depend on treatment (true effect 0).

    Noise has standard deviation sqrt(2).
    """
    rng = rng_for(seed, which, rep)
    x = rng.standard_normal(n)
    pi = 0.5 * (1 + np.tanh(0.5 * toy_logit(which, x)))
    A = (rng.random(n) < pi).astype(np.int64)
    mu = toy_mean(x)
    Y = mu + np.sqrt(2) * rng.standard_normal(n)
    return Sample(x[:, None], A, Y, mu0=mu, mu1=mu)


def toy_propensity(which: int, x) -> np.ndarray:
    return 0.5 * (1 + np.tanh(0.5 * toy_logit(which, np.asarray(x))))


def _h(x):
    return x + 10 * x**3 - 1 / (0.1 + 0.1 * x**2)


def itr_main_effect(which: int, X):
    if which == 1:
        return 8 - sum((-1) ** j * _h(X[:, j - 1]) for j in (1, 2, 3))
    return 8 + 0.5 * _h(X[:, 0])


def itr_contrast(which: int, X):
    """Delta(X) = mu_1(X) - mu_0(X)."""
    if which == 1:
        return X[:, 1] - 0.25 * X[:, 0] ** 2 - X[:, 3] + 0.25 * X[:, 2] ** 2
    return (-1 - X[:, 0] ** 3 + np.exp(X[:, 2] ** 2 + X[:, 4]) + 0.6 * X[:, 5]
            - (X[:, 6] + X[:, 7]) ** 2)


def itr_logit(which: int, X):
    if which == 1:
        return -1 - sum((-1) ** j * (7 / 4 * X[:, j - 1] + 7 / 6 * X[:, j - 1] ** 2
                                      + 7 / 12 * X[:, j - 1] ** 3) for j in (1, 2, 3))
    x1 = X[:, 0]
    return -1 + 7 / 4 * x1 + 7 / 6 * x1**2 + 7 / 12 * x1**3


def itr_scenario(which: int, n: int, seed: int, rep: int = 0) -> Sample:
    """Ten Unif(-1, 1) covariates; ``mu0``/``mu1`` carry the true conditional means."""
    if which not in (1, 2):
        raise ScenarioError(f"ITR scenario must be 1 or 2, got {which}")
    rng = rng_for(seed, 100 + which, rep)
    X = rng.uniform(-1, 1, (n, 10))
    pi = 0.5 * (1 + np.tanh(0.5 * itr_logit(which, X)))
    A = (rng.random(n) < pi).astype(np.int64)
    g = itr_main_effect(which, X)
    delta = itr_contrast(which, X)
    Y = g + (2 * A - 1) * delta / 2 + rng.standard_normal(n)
    return Sample(X, A, Y, mu0=g - delta / 2, mu1=g + delta / 2)


def itr_oracle(which: int, n: int = 1_000_000, seed: int = 7):
    """(optimal value, share with Delta > 0) on ``n`` fresh covariate draws."""
    s = itr_scenario(which, n, seed)
    best = np.maximum(s.mu0, s.mu1)
    return float(best.mean()), float(np.mean(s.mu1 > s.mu0))


# ---------------------------------------------------------------------------
# Monte-Carlo harness

@dataclass
class McResult:
    method: str
    rmse: float
    bias: float
    reps: int
    true_tau: float
    failures: int = 0
    max_a5: float = 0.0
    estimates: np.ndarray = field(default=None, repr=False)

    def row(self) -> dict:
        return {"method": self.method, "rmse": self.rmse, "bias": self.bias, "reps": self.reps,
                "true_tau": self.true_tau, "failures": self.failures, "max_a5": self.max_a5}


def _replicate(spec: ScenarioSpec, methods, rep: int):
    from .balancing import build_problem, solve_weights
    from .estimation import logistic_ipw_weights, weighted_ate

    s = generate(spec, rep)
    ss, _ = standardize(s)
    D = None
    out = {}
    for m in methods:
        ok, a5 = True, 0.0
        if m == "unweighted":
            w = np.ones(s.n)
        elif m == "ipw":
            w = logistic_ipw_weights(ss)
        else:
            if D is None:
                D = distance_matrix(ss.X)
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                bw = solve_weights(build_problem(ss, D, m), ss, m, D=D)
            w, ok, a5 = bw.w, bw.converged, bw.a5_statistic()
        out[m] = (weighted_ate(s, w), ok, a5)
    return out


def run_mc(spec: ScenarioSpec, methods: Sequence[str] = MC_METHODS, reps: int = 1000,
           jobs: int = 1, progress=None) -> dict:
    """RMSE and bias of each weighting method's ATE estimate over ``reps`` datasets.

    Replicate ``r`` is generated from stream ``(spec.seed, r)`` so the result is
    identical for any ``jobs``.
    """
    for m in methods:
        if m not in MC_METHODS:
            raise ScenarioError(f"unknown method '{m}'; choose from {MC_METHODS}")
    if reps < 1:
        raise ScenarioError("reps must be positive")
    tau, _ = true_ate(spec.outcome, spec.p, spec.covariate_setup)

    def work(r):
        res = _replicate(spec, methods, r)
        if progress is not None:
            progress(r)
        return res

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(work, range(reps)))
    else:
        results = [work(r) for r in range(reps)]
    table = {}
    for m in methods:
        est = np.array([r[m][0] for r in results])
        err = est - tau
        table[m] = McResult(method=m, rmse=float(np.sqrt(np.mean(err**2))), bias=float(err.mean()),
                            reps=reps, true_tau=tau,
                            failures=int(sum(not r[m][1] for r in results)),
                            max_a5=float(max(r[m][2] for r in results)), estimates=est)
    return table


ITR_METHODS = ("iebw", "ebw", "ps", "unweighted")


def run_itr_mc(which: int, n: int = 400, reps: int = 200, seed: int = 0,
               methods: Sequence[str] = ITR_METHODS, test_size: int = 100_000,
               jobs: int = 1) -> dict:
    """Test-set value of outcome-weighted rules over ``reps`` training sets.

    ``ps`` is the main-effects logistic IPW weighting (misspecified for both
    scenarios). Every replicate is scored on one shared oracle sample drawn
    with ``seed + 1``. Returns ``{method: array of values}``.
    """
    from .estimation import compute_weights
    from .itr import evaluate_value, fit_itr

    for m in methods:
        if m not in ITR_METHODS:
            raise ScenarioError(f"unknown ITR method '{m}'; choose from {ITR_METHODS}")
    test = itr_scenario(which, test_size, seed=seed + 1)

    def one(r):
        train = itr_scenario(which, n, seed=seed, rep=r)
        out = {}
        for m in methods:
            w, _ = compute_weights(train, "ipw" if m == "ps" else m)
            out[m] = evaluate_value(fit_itr(train, w), test)
        return out

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            res = list(ex.map(one, range(reps)))
    else:
        res = [one(r) for r in range(reps)]
    return {m: np.array([r[m] for r in res]) for m in methods}
