"""Local linear smoothing with a product kernel, plus the kernel density,
conditional variance and standard-error estimators that go with it.

For ``dim_x > 1`` the normalisations use ``h ** dim_x`` and ``R(K) ** dim_x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bandwidth import select_bandwidth
from .data import Dataset
from .exceptions import DegenerateNeighborhoodError, InputError
from .kernels import KernelSpec, eval_kernel, get_kernel, roughness

WEIGHT_FLOOR = 1e-12
RCOND_FLOOR = 1e-12
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class SmootherConfig:
    kernel: KernelSpec
    h: float
    dim_x: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", get_kernel(self.kernel))
        if not (np.isfinite(self.h) and self.h > 0):
            raise InputError(f"bandwidth must be positive, got {self.h}")
        if self.dim_x not in (1, 2, 3):
            raise InputError("dim_x must be 1, 2 or 3")


@dataclass(frozen=True)
class PointEstimate:
    x: np.ndarray
    g_hat: float
    se: float
    f_hat: float
    sigma2_hat: float
    effective_n: float


def _as_points(points, dim):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None] if dim == 1 else pts[None, :]
    if pts.shape[1] != dim:
        raise InputError(f"evaluation points have {pts.shape[1]} coordinates, expected {dim}")
    return pts


def _chunks(m, n):
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def _weights(x_data, pts, h, kernel):
    """Scaled offsets ``(X_i - x) / h`` of shape (m, n, d) and product weights (m, n)."""
    u = (x_data[None, :, :] - pts[:, None, :]) / h
    return u, np.prod(eval_kernel(kernel, u), axis=-1)


def local_linear(x_data, values, points, h, kernel="gaussian", return_slope=False,
                 constant_fallback=False):
    """Local linear fit of ``values`` on ``x_data`` at each evaluation point.

    Parameters
    ----------
    x_data : array of shape (n, d)
    values : array of shape (n,) or (n, k)
        Several responses sharing the same design can be smoothed at once.
    points : array of shape (m, d)
    constant_fallback : bool
        Use the local constant fit (slope 0) where the local linear system is
        singular instead of raising. Meant for in-sample fits, where an
        isolated observation only has its own weight.

    Returns
    -------
    g_hat : array of shape (m,) or (m, k)
    slope : array of shape (m, d) or (m, k, d), only if ``return_slope``
    """
    kernel = get_kernel(kernel)
    x_data = np.asarray(x_data, float)
    if x_data.ndim == 1:
        x_data = x_data[:, None]
    n, d = x_data.shape
    pts = _as_points(points, d)
    vals = np.asarray(values, float)
    single = vals.ndim == 1
    if single:
        vals = vals[:, None]
    k = vals.shape[1]
    m = pts.shape[0]
    g_hat = np.empty((m, k))
    slope = np.empty((m, k, d))
    for sl in _chunks(m, n * d):
        u, w = _weights(x_data, pts[sl], h, kernel)
        c = w.shape[0]
        wsum = w.sum(axis=1)
        low = wsum < WEIGHT_FLOOR
        if np.any(low):
            bad = pts[sl][np.argmax(low)]
            raise DegenerateNeighborhoodError(
                f"kernel weights vanish near x={np.array2string(bad, precision=6)}", bad
            )
        a = np.empty((c, d + 1, d + 1))
        a[:, 0, 0] = wsum
        wu = w[:, :, None] * u
        a[:, 0, 1:] = wu.sum(axis=1)
        a[:, 1:, 0] = a[:, 0, 1:]
        a[:, 1:, 1:] = np.einsum("cnj,cnk->cjk", wu, u)
        b = np.empty((c, d + 1, k))
        b[:, 0, :] = w @ vals
        b[:, 1:, :] = np.einsum("cnj,nk->cjk", wu, vals)
        rcond = 1.0 / np.linalg.cond(a)
        bad_sys = ~(rcond >= RCOND_FLOOR)
        if constant_fallback and np.any(bad_sys):
            a[bad_sys, 0, 1:] = a[bad_sys, 1:, 0] = 0.0
            a[bad_sys, 1:, 1:] = np.eye(d)
            b[bad_sys, 1:, :] = 0.0
        elif np.any(bad_sys):
            bad = pts[sl][np.argmax(bad_sys)]
            raise DegenerateNeighborhoodError(
                f"singular local linear system near x={np.array2string(bad, precision=6)}", bad
            )
        coef = np.linalg.solve(a, b)
        g_hat[sl] = coef[:, 0, :]
        slope[sl] = np.swapaxes(coef[:, 1:, :], 1, 2) / h
    if single:
        g_hat, slope = g_hat[:, 0], slope[:, 0, :]
    return (g_hat, slope) if return_slope else g_hat


def kernel_sums(x_data, points, h, kernel, values=None):
    """``sum_i K((X_i - x)/h)`` and optionally ``sum_i v_i K((X_i - x)/h)`` per point."""
    x_data = np.asarray(x_data, float)
    if x_data.ndim == 1:
        x_data = x_data[:, None]
    n, d = x_data.shape
    pts = _as_points(points, d)
    s0 = np.empty(pts.shape[0])
    sv = None if values is None else np.empty(pts.shape[0])
    for sl in _chunks(pts.shape[0], n * d):
        _, w = _weights(x_data, pts[sl], h, kernel)
        s0[sl] = w.sum(axis=1)
        if values is not None:
            sv[sl] = w @ values
    return s0, sv


def density(x_data, points, h, kernel="gaussian"):
    x_data = np.asarray(x_data, float)
    if x_data.ndim == 1:
        x_data = x_data[:, None]
    n, d = x_data.shape
    s0, _ = kernel_sums(x_data, points, h, get_kernel(kernel))
    return s0 / (n * h**d)


def conditional_variance(x_data, residuals, points, h, dim_theta=0, kernel="gaussian"):
    """Kernel estimate of ``Var(psi | X = x)`` from residuals at the data points.

    ``sum_i U_i^2 K_i / ((n - dim_theta) h^d f_hat(x))``.
    """
    x_data = np.asarray(x_data, float)
    if x_data.ndim == 1:
        x_data = x_data[:, None]
    n, d = x_data.shape
    if n <= dim_theta:
        raise InputError(f"need more observations ({n}) than first-stage parameters ({dim_theta})")
    s0, su = kernel_sums(x_data, points, h, get_kernel(kernel), np.asarray(residuals, float) ** 2)
    f_hat = s0 / (n * h**d)
    small = f_hat < WEIGHT_FLOOR
    if np.any(small):
        bad = _as_points(points, d)[np.argmax(small)]
        raise DegenerateNeighborhoodError(f"density too small at x={bad}", bad)
    return su / ((n - dim_theta) * h**d * f_hat)


def standard_error(f_hat, sigma2, n, h, dim_x=1, kernel="gaussian"):
    """``sqrt(R(K)^d sigma2 / (n h^d f_hat))``, the pointwise standard error of g_hat."""
    f_hat = np.asarray(f_hat, float)
    sigma2 = np.asarray(sigma2, float)
    if np.any(f_hat <= 0):
        raise InputError("density estimate must be positive")
    return np.sqrt(roughness(kernel, dim_x) * sigma2 / (n * h**dim_x * f_hat))


def smooth_with_se(x_data, values, points, h, dim_theta=0, kernel="gaussian"):
    """Estimate, density, conditional variance and standard error on ``points``.

    Residuals ``U_i = psi_i - g_hat(X_i)`` come from the same smoother run at
    every data point (no leave-one-out).

    Returns a dict of arrays with keys ``g_hat, se, f_hat, sigma2, effective_n``.
    """
    kernel = get_kernel(kernel)
    x_data = np.asarray(x_data, float)
    if x_data.ndim == 1:
        x_data = x_data[:, None]
    n, d = x_data.shape
    values = np.asarray(values, float)
    pts = _as_points(points, d)
    g_hat = local_linear(x_data, values, pts, h, kernel)
    resid = values - local_linear(x_data, values, x_data, h, kernel, constant_fallback=True)
    s0, su = kernel_sums(x_data, pts, h, kernel, resid**2)
    f_hat = s0 / (n * h**d)
    if np.any(f_hat < WEIGHT_FLOOR):
        bad = pts[np.argmax(f_hat < WEIGHT_FLOOR)]
        raise DegenerateNeighborhoodError(f"density too small at x={bad}", bad)
    if n <= dim_theta:
        raise InputError(f"need more observations ({n}) than first-stage parameters ({dim_theta})")
    sigma2 = su / ((n - dim_theta) * h**d * f_hat)
    se = standard_error(f_hat, sigma2, n, h, d, kernel)
    return {
        "g_hat": g_hat,
        "se": se,
        "f_hat": f_hat,
        "sigma2": sigma2,
        "effective_n": s0 / eval_kernel(kernel, 0.0) ** d,
    }


# Single-point operations on a Dataset / PseudoOutcome pair.


def _psi_values(psi):
    return np.asarray(getattr(psi, "psi", psi), float)


def fit_local_linear(psi, data: Dataset, cfg: SmootherConfig, x):
    g, s = local_linear(data.x, _psi_values(psi), _as_points(x, data.dim_x), cfg.h, cfg.kernel,
                        return_slope=True)
    return float(g[0]), s[0]


def density_estimate(data: Dataset, cfg: SmootherConfig, x) -> float:
    return float(density(data.x, _as_points(x, data.dim_x), cfg.h, cfg.kernel)[0])


def cond_variance(psi, data: Dataset, cfg: SmootherConfig, g_hat_at_data, dim_theta, x) -> float:
    resid = _psi_values(psi) - np.asarray(g_hat_at_data, float)
    return float(conditional_variance(data.x, resid, _as_points(x, data.dim_x), cfg.h,
                                      dim_theta, cfg.kernel)[0])


def point_estimate(psi, data: Dataset, cfg: SmootherConfig, x, dim_theta=0) -> PointEstimate:
    pts = _as_points(x, data.dim_x)
    out = smooth_with_se(data.x, _psi_values(psi), pts, cfg.h, dim_theta, cfg.kernel)
    return PointEstimate(pts[0], *(float(out[k][0]) for k in
                                   ("g_hat", "se", "f_hat", "sigma2", "effective_n")))


class LocalLinearRegression(RegressorMixin, BaseEstimator):
    """Local linear kernel regression.

    Parameters
    ----------
    bandwidth : float or "plugin"
        ``"plugin"`` runs the direct plug-in selector on each coordinate.
    kernel : {"gaussian", "biweight", "epanechnikov"}
    undersmooth : bool
        Multiply a plug-in bandwidth by ``n ** (1/5 - 2/7)`` so the smoothing
        bias is negligible relative to the standard error. Ignored for a
        numeric bandwidth.
    dim_theta : int
        Degrees of freedom spent on the responses before smoothing; enters
        the conditional variance denominator.
    """

    def __init__(self, bandwidth="plugin", kernel="gaussian", undersmooth=True, dim_theta=0):
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.undersmooth = undersmooth
        self.dim_theta = dim_theta

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] > 3:
            raise InputError("at most 3 smoothing coordinates are supported")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "plugin":
                raise InputError(f"unknown bandwidth rule {self.bandwidth!r}")
            sel = select_bandwidth(X, y, undersmooth=self.undersmooth, kernel=self.kernel)
            self.bandwidth_, self.plugin_ = sel.h_n, sel
        else:
            self.bandwidth_ = float(self.bandwidth)
            self.plugin_ = None
        SmootherConfig(self.kernel, self.bandwidth_, X.shape[1])
        self.X_, self.y_ = X, y
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "bandwidth_")
        X = check_array(X)
        return local_linear(self.X_, self.y_, X, self.bandwidth_, self.kernel)

    def predict_with_se(self, X):
        """Dict with ``g_hat``, ``se``, ``f_hat``, ``sigma2`` at the rows of ``X``."""
        check_is_fitted(self, "bandwidth_")
        X = check_array(X)
        return smooth_with_se(self.X_, self.y_, X, self.bandwidth_, self.dim_theta, self.kernel)
