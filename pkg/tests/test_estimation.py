import numpy as np
import pytest
from hypothesis import given, strategies as st

from energybal.data import DataError, Sample
from energybal.energy import distance_matrix, weighted_energy_distance
from energybal.estimation import (ConvergenceError, EstimateResult, bootstrap, bootstrap_estimate,
                                  compute_weights, fit_logistic, _resample, logistic_ipw_weights, point_estimate,
                                  propensity_scores, weighted_ate, weighted_att, weighted_contrast)
from energybal.simulation import toy_scenario
from conftest import random_sample

Y4 = np.array([1.0, 3.0, 0.0, 2.0])
A4 = np.array([1, 1, 0, 0])


def s4(Y=Y4):
    return Sample(np.zeros((4, 1)) + np.arange(4)[:, None], A4, Y)


def test_ate_examples():
    assert weighted_ate(s4(), np.ones(4)) == pytest.approx(1.0, abs=1e-14)
    assert weighted_ate(s4(), np.array([2.0, 0.0, 1.0, 1.0])) == pytest.approx(0.0, abs=1e-14)


def test_zero_group_weights():
    with pytest.raises(DataError, match="all zero"):
        weighted_ate(s4(), np.array([0.0, 0.0, 1.0, 1.0]))
    with pytest.raises(DataError):
        weighted_ate(s4(), np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(DataError):
        weighted_ate(Sample(np.zeros((4, 1)), A4), np.ones(4))


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.sampled_from([0, 1]))
def test_hajek_invariance(seed, c, group):
    s = random_sample(20, 2, seed=seed)
    w = np.random.default_rng(seed).random(s.n) + 0.1
    w2 = w.copy()
    w2[s.A == group] *= c
    assert abs(weighted_ate(s, w) - weighted_ate(s, w2)) <= 1e-12 * max(1, abs(weighted_ate(s, w)))
    assert abs(weighted_att(s, w) - weighted_att(s, w2)) <= 1e-12 * max(1, abs(weighted_att(s, w)))


@given(st.integers(0, 10_000))
def test_row_permutation_invariance(seed):
    s = random_sample(15, 2, seed=seed)
    w = np.random.default_rng(seed).random(s.n) + 0.1
    perm = np.random.default_rng(seed + 1).permutation(s.n)
    assert weighted_ate(s, w) == pytest.approx(weighted_ate(s.subset(perm), w[perm]), abs=1e-12)


def test_att_examples():
    X = np.array([[0.0], [1.0], [0.0], [1.0]])
    s = Sample(X, A4, Y4)
    assert weighted_att(s, np.ones(4)) == pytest.approx(2.0 - 1.0)
    s1 = Sample(np.arange(3.0), [1, 1, 0], [1.0, 5.0, 2.0])
    assert weighted_att(s1, np.ones(3)) == pytest.approx(3.0 - 2.0)
    s = random_sample(20, 2, seed=3)
    w = np.random.default_rng(0).random(s.n) + 0.1
    w1 = w.copy()
    w1[s.A == 1] = 1.0
    assert weighted_att(s, w) == pytest.approx(weighted_ate(s, w1), abs=1e-12)


def test_contrast_examples():
    A = np.array([0, 1, 2, 0, 1, 2])
    Y = np.array([1.0, 2.0, 6.0, 3.0, 4.0, 0.0])
    s = Sample(np.arange(6.0), A, Y)
    assert weighted_contrast(s, np.ones(6), 1, 0) == pytest.approx(3.0 - 2.0)
    # hand case: group 2 weights (3, 1), group 0 weights (1, 3)
    w = np.array([1.0, 1.0, 3.0, 3.0, 1.0, 1.0])
    assert weighted_contrast(s, w, 2, 0) == pytest.approx((18 + 0) / 4 - (1 + 9) / 4)
    w2 = w.copy()
    w2[A == 2] *= 10
    assert weighted_contrast(s, w2, 2, 0) == pytest.approx(weighted_contrast(s, w, 2, 0), abs=1e-12)
    with pytest.raises(DataError):
        weighted_contrast(s, w, 2, 5)
    b = random_sample(12, 2, seed=1)
    wb = np.random.default_rng(1).random(12) + 0.1
    assert weighted_contrast(b, wb, 1, 0) == pytest.approx(weighted_ate(b, wb), abs=1e-14)


def test_point_estimate_dispatch(sample):
    w = np.ones(sample.n)
    assert point_estimate(sample, w) == weighted_ate(sample, w)
    assert point_estimate(sample, w, "contrast", (1, 0)) == weighted_ate(sample, w)
    with pytest.raises(ValueError):
        point_estimate(sample, w, "contrast")
    with pytest.raises(ValueError):
        point_estimate(sample, w, "cate")


def test_ipw_null_model():
    rng = np.random.default_rng(0)
    n = 2000
    X = rng.normal(size=(n, 2))
    A = (rng.random(n) < 0.3).astype(int)
    s = Sample(X, A)
    pi = propensity_scores(s)
    assert np.abs(pi - A.mean()).max() < 0.05
    w = logistic_ipw_weights(s)
    assert np.abs(w - 1).max() < 0.2
    for a in (0, 1):
        assert w[A == a].sum() == pytest.approx(np.sum(A == a))


def test_ipw_large_sample_coefficients():
    rng = np.random.default_rng(1)
    n = 100_000
    x = rng.normal(size=n)
    A = (rng.random(n) < 1 / (1 + np.exp(1 - x))).astype(float)
    beta = fit_logistic(np.column_stack([np.ones(n), x]), A)
    np.testing.assert_allclose(beta, [-1, 1], atol=0.05)


def test_irls_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(2)
    F = np.column_stack([np.ones(500), rng.normal(size=(500, 3))])
    A = (rng.random(500) < 1 / (1 + np.exp(-F @ [0.2, 1, -0.5, 0.3]))).astype(float)
    ref = sm.Logit(A, F).fit(disp=0, tol=1e-12).params
    np.testing.assert_allclose(fit_logistic(F, A), ref, atol=1e-7)


def test_irls_loglik_monotone():
    rng = np.random.default_rng(3)
    F = np.column_stack([np.ones(300), rng.normal(size=(300, 4)) * 3])
    A = (rng.random(300) < 1 / (1 + np.exp(-F @ [1, 2, -1, 0.5, 1]))).astype(float)
    hist = []
    fit_logistic(F, A, history=hist)
    assert len(hist) >= 2
    assert np.all(np.diff(hist) >= -1e-10)


def test_separation_raises():
    x = np.arange(-5.0, 5.0)
    s = Sample(x, (x > 0).astype(int))
    with pytest.raises(ConvergenceError):
        logistic_ipw_weights(s)


def test_misspecified_ipw_worse_balance():
    # linear-only propensity model on the quadratic toy scenario balances worse
    s = toy_scenario(2, 500, seed=0)
    x = s.X[:, 0]
    D = distance_matrix(s.X)
    lin = logistic_ipw_weights(s)
    quad = logistic_ipw_weights(s, features=np.column_stack([x, x**2]))

    def e(w):
        return sum(weighted_energy_distance(D, s.A, w, a).value for a in (0, 1))

    assert e(lin) > e(quad)


def test_bootstrap_constant_outcome():
    s = random_sample(30, 2, seed=0)
    s = Sample(s.X, s.A, np.full(s.n, 4.0))
    r = bootstrap_estimate(s, "unweighted", B=20, seed=1)
    assert r.point == 0 and r.se == 0 and r.ci_low == 0 and r.ci_high == 0


def test_bootstrap_determinism():
    s = random_sample(40, 2, seed=4)
    a = bootstrap_estimate(s, "ebw", B=8, seed=7)
    b = bootstrap_estimate(s, "ebw", B=8, seed=7, jobs=3)
    c = bootstrap_estimate(s, "ebw", B=8, seed=7)
    assert a == b == c
    assert a.B == 8 and a.method == "ebw" and a.solver_failures == 0
    assert bootstrap_estimate(s, "ebw", B=8, seed=8).se != a.se


def test_bootstrap_validation_and_redraws():
    s = random_sample(20, 1, seed=0)
    with pytest.raises(ValueError):
        bootstrap_estimate(s, "unweighted", B=1, seed=0)
    # a single treated unit: most resamples hold fewer than two treated rows
    A = np.zeros(20, int)
    A[0] = 1
    lone = Sample(s.X, A, s.Y)
    with pytest.raises(DataError, match="consecutive"):
        for seed in range(50):
            _resample(lone, np.random.default_rng(seed), (0, 1), max_redraws=0)
    # two treated units out of 12: redraws happen and are counted
    A = np.zeros(12, int)
    A[:2] = 1
    few = Sample(s.X[:12], A, s.Y[:12])
    r = bootstrap_estimate(few, "unweighted", B=30, seed=0)
    assert r.redraws > 0 and r.B == 30


def test_bootstrap_custom_estimator():
    s = random_sample(25, 2, seed=2)
    r = bootstrap(s, lambda x: (float(x.Y.mean()), True), B=50, seed=3)
    assert isinstance(r, EstimateResult)
    assert r.point == pytest.approx(s.Y.mean())
    assert 0 < r.se < 2 * s.Y.std()


def test_compute_weights_methods(sample):
    for m in ("unweighted", "ipw", "ebw", "iebw", "att"):
        w, ok = compute_weights(sample, m)
        assert ok and w.shape == (sample.n,) and w.min() >= 0
    with pytest.raises(ValueError):
        compute_weights(sample, "cbps")


@pytest.mark.slow
def test_bootstrap_coverage():
    # 200 outer replications of a near-unbiased cell with known tau = 0
    from energybal.simulation import ScenarioSpec, generate, true_ate

    spec = ScenarioSpec("I", "D", n=150, p=10, seed=3)
    tau, _ = true_ate("D", 10, 1)
    hits = 0
    for r in range(200):
        res = bootstrap_estimate(generate(spec, r), "ebw", B=100, seed=r)
        hits += res.ci_low <= tau <= res.ci_high
    assert abs(hits / 200 - 0.95) <= 0.05
