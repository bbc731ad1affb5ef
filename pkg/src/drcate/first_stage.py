"""Parametric first stage: per-arm least squares for the outcome regressions
and a logit maximum-likelihood fit for the propensity score."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .data import Dataset, DesignSpec, build_design
from .exceptions import ConvergenceError, InputError, RankDeficiencyError, SeparationError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


def _check_rank(design, what):
    if design.shape[0] < design.shape[1]:
        raise RankDeficiencyError(
            f"{what}: {design.shape[0]} observations for {design.shape[1]} coefficients"
        )
    r = linalg.qr(design, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[-1] <= RANK_TOL * diag[0]:
        raise RankDeficiencyError(f"{what}: design matrix is rank deficient")


def least_squares(design, y):
    """Full-rank least squares via pivoted QR."""
    design = np.asarray(design, float)
    _check_rank(design, "least squares")
    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    coef = np.empty(design.shape[1])
    coef[piv] = linalg.solve_triangular(r, q.T @ y)
    return coef


def logit_irls(design, d, tol=1e-8, max_iter=100, separation_guard=1e4):
    """Newton/IRLS for the logit log-likelihood with step halving.

    Returns ``(beta, iterations)``. Convergence means the score
    ``X'(d - p)`` has max-norm at most ``tol``.
    """
    design = np.asarray(design, float)
    d = np.asarray(d, float)
    if d.min() == d.max():
        raise InputError("both treatment values must be present to fit the propensity score")
    _check_rank(design, "propensity design")

    def loglik(eta):
        return float(d @ eta - np.logaddexp(0.0, eta).sum())

    beta = np.zeros(design.shape[1])
    eta = design @ beta
    ll = loglik(eta)
    converged = False
    for it in range(max_iter + 2):
        p = expit(eta)
        score = design.T @ (d - p)
        if converged or np.max(np.abs(score)) <= tol:
            if np.all((eta > 0) == (d == 1.0)) and np.all(eta != 0):
                raise SeparationError("the fitted index classifies every row (perfect separation)")
            if converged:
                return beta, it
            # One more Newton step: quadratic convergence makes the estimate exact
            # to rounding while the score was only required to be below tol.
            converged = True
        elif it >= max_iter:
            break
        w = p * (1.0 - p)
        info = design.T @ (design * w[:, None])
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            raise SeparationError("information matrix is singular; treatment looks separable") from None
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            cand_eta = design @ cand
            cand_ll = loglik(cand_eta)
            if cand_ll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, eta, ll = cand, cand_eta, cand_ll
        if np.linalg.norm(beta) > separation_guard:
            raise SeparationError(
                f"logit coefficients exceed {separation_guard:g} in norm (perfect separation)"
            )
    raise ConvergenceError(f"logit IRLS did not converge in {max_iter} iterations")


class LogitIRLS(ClassifierMixin, BaseEstimator):
    """Unpenalised logistic regression fitted by IRLS.

    ``X`` is used as given; add a column of ones for an intercept.
    """

    def __init__(self, tol=1e-8, max_iter=100, separation_guard=1e4):
        self.tol = tol
        self.max_iter = max_iter
        self.separation_guard = separation_guard

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.array([0, 1])
        self.coef_, self.n_iter_ = logit_irls(
            X, y, tol=self.tol, max_iter=self.max_iter, separation_guard=self.separation_guard
        )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)


@dataclass(frozen=True)
class FirstStageFit:
    alpha1: np.ndarray
    alpha0: np.ndarray
    beta: np.ndarray
    reg_spec: DesignSpec
    ps_spec: DesignSpec
    converged: bool = True
    iterations: int = 0

    @property
    def dim_theta(self) -> int:
        return len(self.alpha1) + len(self.alpha0) + len(self.beta)


def fit_ols_arm(data: Dataset, spec: DesignSpec, arm: int) -> np.ndarray:
    rows = data.d == arm
    design = build_design(data, spec)[rows]
    if design.shape[0] < design.shape[1]:
        raise RankDeficiencyError(
            f"arm {arm} has {design.shape[0]} observations for {design.shape[1]} coefficients"
        )
    return least_squares(design, data.y[rows])


def fit_logit_mle(data: Dataset, spec: DesignSpec, tol=1e-8, max_iter=100, separation_guard=1e4):
    beta, _ = logit_irls(build_design(data, spec), data.d, tol, max_iter, separation_guard)
    return beta


def fit_first_stage(data: Dataset, reg_spec: DesignSpec, ps_spec: DesignSpec | None = None,
                    tol=1e-8, max_iter=100) -> FirstStageFit:
    ps_spec = reg_spec if ps_spec is None else ps_spec
    alpha1 = fit_ols_arm(data, reg_spec, 1)
    alpha0 = fit_ols_arm(data, reg_spec, 0)
    beta, iters = logit_irls(build_design(data, ps_spec), data.d, tol=tol, max_iter=max_iter)
    return FirstStageFit(alpha1, alpha0, beta, reg_spec, ps_spec, True, iters)


def _checked_design(fit_coef, data, spec):
    design = build_design(data, spec)
    if design.shape[1] != len(fit_coef):
        raise InputError(
            f"design has {design.shape[1]} columns but the fit has {len(fit_coef)} coefficients"
        )
    return design


def predict_mu(fit: FirstStageFit, data, arm: int) -> np.ndarray:
    coef = fit.alpha1 if arm == 1 else fit.alpha0
    return _checked_design(coef, data, fit.reg_spec) @ coef


def predict_pi(fit: FirstStageFit, data, trim_eps=0.01):
    """Fitted propensity scores clipped into ``[trim_eps, 1 - trim_eps]``.

    Returns ``(pi, n_clipped)``.
    """
    if not 0.0 <= trim_eps < 0.5:
        raise InputError("trim_eps must lie in [0, 0.5)")
    raw = expit(_checked_design(fit.beta, data, fit.ps_spec) @ fit.beta)
    pi = np.clip(raw, trim_eps, 1.0 - trim_eps)
    n_clipped = int(np.count_nonzero(pi != raw))
    if n_clipped:
        logger.info("clipped %d propensity scores into [%g, %g]", n_clipped, trim_eps, 1 - trim_eps)
    return pi, n_clipped
