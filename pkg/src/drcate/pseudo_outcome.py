"""Per-observation pseudo-outcomes whose conditional mean given X is the CATE.

``dr`` is the augmented inverse probability weighting (AIPW) transform,
``ipw`` keeps only its weighting part and ``ra`` only the regression part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, DesignSpec
from .exceptions import InputError
from .first_stage import FirstStageFit, fit_first_stage, predict_mu, predict_pi

ESTIMATORS = ("dr", "ipw", "ra")


@dataclass(frozen=True)
class PseudoOutcome:
    psi: np.ndarray
    estimator: str
    fit: FirstStageFit | None = None
    clip_count: int = 0

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if not np.all(np.isfinite(psi)):
            raise InputError(
                f"non-finite {self.estimator} pseudo-outcome; enable propensity trimming"
            )
        psi = psi.copy()
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    def __len__(self):
        return self.psi.shape[0]


def aipw_terms(y, d, pi, mu1, mu0):
    """``(psi1, psi0)``; ``psi1 - psi0`` is the doubly robust pseudo-outcome."""
    with np.errstate(divide="ignore", invalid="ignore"):
        psi1 = d * y / pi - (d - pi) / pi * mu1
        psi0 = (1.0 - d) * y / (1.0 - pi) + (d - pi) / (1.0 - pi) * mu0
    return psi1, psi0


def ipw_terms(y, d, pi):
    with np.errstate(divide="ignore", invalid="ignore"):
        return d * y / pi - (1.0 - d) * y / (1.0 - pi)


def compute_psi_dr(data: Dataset, fit: FirstStageFit, trim_eps=0.01) -> PseudoOutcome:
    pi, clipped = predict_pi(fit, data, trim_eps)
    psi1, psi0 = aipw_terms(data.y, data.d, pi, predict_mu(fit, data, 1), predict_mu(fit, data, 0))
    return PseudoOutcome(psi1 - psi0, "dr", fit, clipped)


def compute_psi_ipw(data: Dataset, fit: FirstStageFit, trim_eps=0.01) -> PseudoOutcome:
    pi, clipped = predict_pi(fit, data, trim_eps)
    return PseudoOutcome(ipw_terms(data.y, data.d, pi), "ipw", fit, clipped)


def compute_psi_ra(data: Dataset, fit: FirstStageFit) -> PseudoOutcome:
    return PseudoOutcome(predict_mu(fit, data, 1) - predict_mu(fit, data, 0), "ra", fit, 0)


def compute_psi(data: Dataset, fit: FirstStageFit, estimator="dr", trim_eps=0.01) -> PseudoOutcome:
    if estimator == "dr":
        return compute_psi_dr(data, fit, trim_eps)
    if estimator == "ipw":
        return compute_psi_ipw(data, fit, trim_eps)
    if estimator == "ra":
        return compute_psi_ra(data, fit)
    raise InputError(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")


def dim_theta(fit: FirstStageFit, estimator="dr") -> int:
    """Number of first-stage parameters the pseudo-outcome depends on."""
    if estimator == "ipw":
        return len(fit.beta)
    if estimator == "ra":
        return len(fit.alpha1) + len(fit.alpha0)
    return fit.dim_theta


def estimate_ate(psi) -> float:
    values = psi.psi if isinstance(psi, PseudoOutcome) else np.asarray(psi, float)
    return float(np.mean(values))


class PseudoOutcomeTransformer(TransformerMixin, BaseEstimator):
    """Fit the first stage on ``(Z, y, treatment)`` and map observations to
    pseudo-outcomes.

    Parameters
    ----------
    reg_spec, ps_spec : DesignSpec, optional
        Outcome-regression and propensity designs over the columns of ``Z``.
        Both default to an intercept plus every column, linearly.
    estimator : {"dr", "ipw", "ra"}
    trim_eps : float
        Propensity scores are clipped into ``[trim_eps, 1 - trim_eps]``.
    """

    def __init__(self, reg_spec=None, ps_spec=None, estimator="dr", trim_eps=0.01):
        self.reg_spec = reg_spec
        self.ps_spec = ps_spec
        self.estimator = estimator
        self.trim_eps = trim_eps

    def _specs(self, p):
        reg = self.reg_spec if self.reg_spec is not None else DesignSpec.linear(range(p))
        ps = self.ps_spec if self.ps_spec is not None else reg
        return reg, ps

    def fit(self, Z, y, treatment):
        data = Dataset(y, treatment, Z)
        reg, ps = self._specs(data.p)
        self.first_stage_ = fit_first_stage(data, reg, ps)
        return self

    def transform(self, Z, y, treatment):
        check_is_fitted(self, "first_stage_")
        data = Dataset(y, treatment, Z)
        return compute_psi(data, self.first_stage_, self.estimator, self.trim_eps).psi

    def fit_transform(self, Z, y, treatment):
        return self.fit(Z, y, treatment).transform(Z, y, treatment)
