import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from drcate.data import Dataset, DesignSpec, build_design
from drcate.exceptions import InputError, RankDeficiencyError, SeparationError
from drcate.first_stage import (
    FirstStageFit, LogitIRLS, fit_first_stage, fit_logit_mle, fit_ols_arm, least_squares,
    logit_irls, predict_mu, predict_pi,
)
from drcate.monte_carlo import generate_dgp

LIN0 = DesignSpec.linear([0])
INTERCEPT = DesignSpec()


def test_ols_exact_line():
    data = Dataset([1.0, 2.0, 3.0, 9.0], [1, 1, 1, 0], [[0.0], [1.0], [2.0], [5.0]])
    np.testing.assert_allclose(fit_ols_arm(data, LIN0, 1), [1.0, 1.0], atol=1e-12)


def test_ols_constant_outcome_intercept_only():
    data = Dataset(np.full(6, 4.5), np.ones(6), np.ones((6, 1)))
    coef = fit_ols_arm(data, INTERCEPT, 1)
    np.testing.assert_allclose(coef, [4.5], atol=1e-12)


def test_ols_matches_normal_equations(rng):
    x = rng.standard_normal((50, 3))
    y = x @ [1.0, -2.0, 0.5] + rng.standard_normal(50)
    coef = least_squares(x, y)
    oracle = np.linalg.solve(x.T @ x, x.T @ y)
    np.testing.assert_allclose(coef, oracle, rtol=1e-8, atol=1e-10)
    resid = y - x @ coef
    assert np.max(np.abs(x.T @ resid)) <= 1e-8 * np.linalg.norm(x) * np.linalg.norm(y)


def test_ols_fitted_values_invariant_to_column_rescaling(rng):
    x = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    scale = np.array([1e-3, 7.0, -2.0])
    fit_a = x @ least_squares(x, y)
    fit_b = (x * scale) @ least_squares(x * scale, y)
    np.testing.assert_allclose(fit_a, fit_b, atol=1e-8)


def test_ols_rank_deficient_raises(rng):
    x = rng.standard_normal((20, 2))
    with pytest.raises(RankDeficiencyError):
        least_squares(np.column_stack([x, x[:, 0] * 2.0]), rng.standard_normal(20))


def test_ols_arm_too_small():
    data = Dataset([1.0, 2.0, 3.0], [1, 0, 0], [[0.0], [1.0], [2.0]])
    with pytest.raises(RankDeficiencyError):
        fit_ols_arm(data, LIN0, 1)


@pytest.mark.parametrize("share, expected", [(0.5, 0.0), (0.75, np.log(3.0))])
def test_logit_intercept_only_closed_form(share, expected):
    n = 400
    d = np.zeros(n)
    d[: int(share * n)] = 1.0
    beta, _ = logit_irls(np.ones((n, 1)), d)
    assert beta[0] == pytest.approx(expected, abs=1e-10)


@given(st.integers(1, 59))
def test_logit_intercept_only_matches_logit_of_mean(k):
    d = np.zeros(60)
    d[:k] = 1.0
    beta, _ = logit_irls(np.ones((60, 1)), d)
    m = k / 60
    assert beta[0] == pytest.approx(np.log(m / (1 - m)), abs=1e-10)


def test_logit_recovers_truth_and_score_is_small():
    p, n = 10, 2000
    data = generate_dgp(p, n, np.random.default_rng(17))
    spec = DesignSpec.linear(range(p))
    beta = fit_logit_mle(data, spec)
    design = build_design(data, spec)
    prob = expit(design @ beta)
    score = design.T @ (data.d - prob)
    assert np.max(np.abs(score)) <= 1e-8
    truth = np.zeros(p + 1)
    truth[1 + p // 2 - 1:] = 1.0 / np.sqrt(p / 2)
    cov = np.linalg.inv(design.T @ (design * (prob * (1 - prob))[:, None]))
    z = np.abs(beta - truth) / np.sqrt(np.diag(cov))
    assert np.all(z < 3.0)


def test_logit_loglik_non_decreasing(rng):
    x = np.column_stack([np.ones(300), rng.standard_normal((300, 2))])
    d = (rng.uniform(size=300) < expit(x @ [0.3, 1.0, -1.5])).astype(float)
    lls = []
    for it in range(6):
        try:
            beta, _ = logit_irls(x, d, max_iter=it)
        except Exception:
            continue
        eta = x @ beta
        lls.append(d @ eta - np.logaddexp(0, eta).sum())
    beta, _ = logit_irls(x, d)
    eta = x @ beta
    final = d @ eta - np.logaddexp(0, eta).sum()
    assert all(final >= ll - 1e-9 for ll in lls)


def test_logit_separation_detected():
    x = np.linspace(-1, 1, 40)
    d = (x > 0).astype(float)
    with pytest.raises(SeparationError, match="separation"):
        logit_irls(np.column_stack([np.ones(40), x]), d)


def test_logit_needs_both_treatment_values():
    with pytest.raises(InputError):
        logit_irls(np.ones((5, 1)), np.ones(5))


def test_logit_sklearn_api(rng):
    x = np.column_stack([np.ones(200), rng.standard_normal(200)])
    d = (rng.uniform(size=200) < expit(x @ [0.2, 1.0])).astype(int)
    clf = LogitIRLS().fit(x, d)
    proba = clf.predict_proba(x)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(clf.predict(x))) <= {0, 1}
    assert clf.get_params()["tol"] == 1e-8


def _fit(alpha1, alpha0, beta, spec=LIN0):
    return FirstStageFit(np.asarray(alpha1, float), np.asarray(alpha0, float),
                         np.asarray(beta, float), spec, spec)


def test_predict_mu_examples():
    data = Dataset([0.0], [1], [[2.0]])
    assert predict_mu(_fit([1, 1], [0, 0], [0, 0]), data, 1)[0] == pytest.approx(3.0)
    assert predict_mu(_fit([1, 1], [0, 0], [0, 0]), data, 0)[0] == 0.0


def test_predict_mu_exact_fit_interpolates():
    z = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    y = np.array([1.0, 3.0, 5.0, 0.0, 0.0])
    d = np.array([1, 1, 1, 0, 0])
    data = Dataset(y, d, z)
    fit = fit_first_stage(data, LIN0, INTERCEPT)
    np.testing.assert_allclose(predict_mu(fit, data, 1)[:3], y[:3], atol=1e-12)


def test_predict_mu_dimension_mismatch():
    data = Dataset([0.0], [1], [[2.0]])
    with pytest.raises(InputError):
        predict_mu(_fit([1, 1, 1], [0, 0, 0], [0]), data, 1)


def test_predict_pi_examples():
    data = Dataset([0.0, 0.0], [1, 0], [[0.0], [20.0]])
    pi, clipped = predict_pi(_fit([0, 0], [0, 0], [0, 0]), data, 0.01)
    np.testing.assert_allclose(pi, 0.5)
    assert clipped == 0
    pi, clipped = predict_pi(_fit([0, 0], [0, 0], [0, 1]), data, 0.01)
    assert pi[0] == 0.5 and pi[1] == pytest.approx(0.99)
    assert clipped == 1
    for eps in (0.0, 0.2, 0.4):
        assert predict_pi(_fit([0, 0], [0, 0], [0, 1]), data, eps)[0][0] == 0.5


@given(st.floats(0.0, 0.49), st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_predict_pi_within_trim_bounds(eps, eta):
    z = np.array(eta)[:, None]
    data = Dataset(np.zeros(len(eta)), np.zeros(len(eta)), z)
    pi, _ = predict_pi(_fit([0, 0], [0, 0], [0, 1]), data, eps)
    assert np.all(pi >= eps) and np.all(pi <= 1 - eps)


@pytest.mark.parametrize("eps", [-0.1, 0.5, 0.7])
def test_predict_pi_rejects_bad_trim(eps):
    data = Dataset([0.0], [1], [[0.0]])
    with pytest.raises(InputError):
        predict_pi(_fit([0, 0], [0, 0], [0, 0]), data, eps)


def test_first_stage_dim_theta():
    data = generate_dgp(4, 300, np.random.default_rng(3))
    fit = fit_first_stage(data, DesignSpec.linear(range(4)), DesignSpec.linear(range(2)))
    assert fit.dim_theta == 5 + 5 + 3
    assert fit.converged
