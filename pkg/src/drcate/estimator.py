"""End-to-end CATE estimator: first stage, pseudo-outcome, local linear smooth."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bands import BandSpec, assemble_band, constancy_test
from .bandwidth import select_bandwidth
from .data import Dataset, DesignSpec
from .exceptions import InputError
from .first_stage import fit_first_stage
from .local_linear import SmootherConfig, local_linear, smooth_with_se
from .pseudo_outcome import ESTIMATORS, compute_psi, dim_theta, estimate_ate


class DoublyRobustCATE(BaseEstimator):
    """Conditional average treatment effect as a function of a few covariates.

    A parametric first stage (per-arm least squares and a logit propensity
    score) turns each observation into a pseudo-outcome whose conditional mean
    given ``X`` is the CATE; a local linear smoother of the pseudo-outcome on
    ``X`` gives the estimate and its analytic standard error.

    Parameters
    ----------
    x_cols : sequence of int
        Columns of ``Z`` that the CATE is conditioned on (one to three).
    reg_spec, ps_spec : DesignSpec, optional
        Outcome-regression and propensity designs. Default: intercept plus
        every column of ``Z``; ``ps_spec`` defaults to ``reg_spec``.
    estimator : {"dr", "ipw", "ra"}
        Pseudo-outcome: doubly robust, inverse probability weighting, or
        regression adjustment.
    kernel : {"gaussian", "biweight", "epanechnikov"}
    bandwidth : "plugin" or float
    undersmooth : bool
        Shrink a plug-in bandwidth by ``n^(-3/35)`` before smoothing.
    trim_eps : float
        Propensity clipping level.

    Attributes
    ----------
    bandwidth_ : float
    ate_ : float
        Mean pseudo-outcome.
    psi_ : PseudoOutcome
    first_stage_ : FirstStageFit
    plugin_ : PluginState or None
    """

    def __init__(self, x_cols=(0,), reg_spec=None, ps_spec=None, estimator="dr",
                 kernel="gaussian", bandwidth="plugin", undersmooth=True, trim_eps=0.01):
        self.x_cols = x_cols
        self.reg_spec = reg_spec
        self.ps_spec = ps_spec
        self.estimator = estimator
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.undersmooth = undersmooth
        self.trim_eps = trim_eps

    def fit(self, Z, y=None, treatment=None):
        """Fit on covariates ``Z``, outcome ``y`` and 0/1 ``treatment``, or on a Dataset."""
        if isinstance(Z, Dataset):
            data = Z
        elif y is None or treatment is None:
            raise InputError("fit needs y and treatment unless Z is a Dataset")
        else:
            data = Dataset(y, treatment, Z, tuple(self.x_cols))
        return self.fit_dataset(data)

    def fit_dataset(self, data: Dataset):
        if self.estimator not in ESTIMATORS:
            raise InputError(f"unknown estimator {self.estimator!r}")
        reg = self.reg_spec if self.reg_spec is not None else DesignSpec.linear(range(data.p))
        ps = self.ps_spec if self.ps_spec is not None else reg
        self.first_stage_ = fit_first_stage(data, reg, ps)
        self.psi_ = compute_psi(data, self.first_stage_, self.estimator, self.trim_eps)
        self.dim_theta_ = dim_theta(self.first_stage_, self.estimator)
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "plugin":
                raise InputError(f"unknown bandwidth rule {self.bandwidth!r}")
            self.plugin_ = select_bandwidth(data.x, self.psi_.psi, self.undersmooth, self.kernel)
            self.bandwidth_ = self.plugin_.h_n
        else:
            self.plugin_ = None
            self.bandwidth_ = float(self.bandwidth)
        self.config_ = SmootherConfig(self.kernel, self.bandwidth_, data.dim_x)
        self.data_ = data
        self.ate_ = estimate_ate(self.psi_)
        self.n_features_in_ = data.p
        return self

    def _points(self, X):
        check_is_fitted(self, "bandwidth_")
        X = np.asarray(X, float)
        if X.ndim == 1 and self.data_.dim_x == 1:
            X = X[:, None]
        return check_array(X)

    def predict(self, X):
        """CATE estimate at the rows of ``X`` (coordinates in ``x_cols`` order)."""
        pts = self._points(X)
        return local_linear(self.data_.x, self.psi_.psi, pts, self.bandwidth_, self.config_.kernel)

    def predict_with_se(self, X):
        pts = self._points(X)
        return smooth_with_se(self.data_.x, self.psi_.psi, pts, self.bandwidth_, self.dim_theta_,
                              self.config_.kernel)

    def default_interval(self, lower_q=0.05, upper_q=0.95):
        check_is_fitted(self, "bandwidth_")
        return np.column_stack([np.quantile(self.data_.x, lower_q, axis=0),
                                np.quantile(self.data_.x, upper_q, axis=0)])

    def confidence_band(self, interval=None, alpha=0.05, flavor="uniform", side="two_sided",
                        grid_points=None):
        """Band over a grid on ``interval`` (default: 5%-95% quantile box of ``X``)."""
        check_is_fitted(self, "bandwidth_")
        interval = self.default_interval() if interval is None else interval
        if grid_points is None:
            grid_points = {1: 201, 2: 51, 3: 21}[self.data_.dim_x]
        spec = BandSpec(interval, alpha, side, flavor, grid_points)
        return assemble_band(self.psi_, self.data_, self.config_, spec, self.dim_theta_)

    def test_constancy(self, band, interval=None):
        check_is_fitted(self, "bandwidth_")
        return constancy_test(band, self.psi_, self.data_, interval)
