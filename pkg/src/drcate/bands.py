"""Analytic critical values and uniform confidence bands.

The band is ``g_hat(x) +/- c * se(x)`` over a box ``I``. The uniform critical
value inverts the leading term of a Piterbarg-type expansion for the
supremum of the standardised estimator,

    F(t) = exp(-k exp(-t - t^2 / (2 a^2))) * sum_m h_{m,d-1} a^(-2m) (1 + t/a^2)^(d-2m-1)

with ``k = 2`` for two-sided and ``k = 1`` for one-sided bands, and returns
``c = a + t / a``. In terms of ``c`` the exponent is ``(c^2 - a^2) / 2`` and
``1 + t/a^2 = c / a``. The level ``a = a_n`` is the largest root of

    mes(I) h^(-d) lambda^(d/2) (2 pi)^(-(d+1)/2) a^(d-1) exp(-a^2 / 2) = 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy import optimize, stats

from .exceptions import BandwidthError, InputError, LevelUnattainableError
from .local_linear import SmootherConfig, smooth_with_se

SIDES = ("two_sided", "one_sided_lower", "one_sided_upper")
FLAVORS = ("uniform", "pointwise", "gumbel")


def _as_interval(interval, dim=None):
    iv = np.atleast_2d(np.asarray(interval, dtype=float))
    if iv.shape[-1] != 2:
        raise InputError("interval must be given as (lower, upper) pairs")
    if dim is not None and iv.shape[0] != dim:
        if iv.shape[0] == 1:
            iv = np.repeat(iv, dim, axis=0)
        else:
            raise InputError(f"interval has {iv.shape[0]} coordinates, expected {dim}")
    if np.any(iv[:, 0] >= iv[:, 1]):
        raise InputError("each interval needs lower < upper")
    return iv


@dataclass(frozen=True)
class BandSpec:
    interval: np.ndarray
    alpha: float = 0.05
    side: str = "two_sided"
    flavor: str = "uniform"
    grid_points: int = 201

    def __post_init__(self):
        object.__setattr__(self, "interval", _as_interval(self.interval))
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if self.side not in SIDES:
            raise InputError(f"side must be one of {SIDES}")
        if self.flavor not in FLAVORS:
            raise InputError(f"flavor must be one of {FLAVORS}")
        if self.grid_points < 2:
            raise InputError("need at least 2 grid points per coordinate")

    @property
    def dim(self):
        return self.interval.shape[0]


@dataclass(frozen=True)
class BandResult:
    grid: np.ndarray  # (m, d)
    g_hat: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    a_n: float
    critical: float
    bandwidth: float
    flavor: str
    side: str
    alpha: float
    criticals: dict = field(default_factory=dict)
    a_n_sq: float = float("nan")

    def bounds(self, flavor):
        """``(lower, upper)`` using another flavor's critical value on the same fit."""
        return band_bounds(self.g_hat, self.se, self.criticals[flavor], self.side)


def measure(interval) -> float:
    iv = _as_interval(interval)
    return float(np.prod(iv[:, 1] - iv[:, 0]))


def _log_b1_scale(dim, h, interval, lam):
    return (np.log(measure(interval)) - dim * np.log(h) + 0.5 * dim * np.log(lam)
            - 0.5 * (dim + 1) * np.log(2.0 * np.pi))


def b1_lhs(a_n, dim, h, interval, lam) -> float:
    """Left-hand side of the equation defining ``a_n`` (equals 1 at the root)."""
    return float(np.exp(_log_b1_scale(dim, h, interval, lam) + (dim - 1) * np.log(a_n)
                        - 0.5 * a_n**2))


def a_n_squared(dim, h, interval, lam) -> float:
    """``a_n^2``. For ``dim == 1`` this is the closed form
    ``2 log((b - a)/h) + 2 log(sqrt(lam) / (2 pi))``, which is negative for
    bandwidths above ``(b - a) sqrt(lam) / (2 pi)``; the one-dimensional
    critical value only needs ``a_n^2``, so it stays defined there."""
    interval = _as_interval(interval, dim)
    if not h > 0:
        raise BandwidthError("bandwidth must be positive")
    if dim == 1:
        if np.any(interval[:, 1] - interval[:, 0] <= h):
            raise BandwidthError(
                f"bandwidth {h:g} is not smaller than the interval length "
                f"{measure(interval):g}; use a smaller bandwidth or a wider interval"
            )
        return float(2.0 * _log_b1_scale(dim, h, interval, lam))
    return compute_a_n(dim, h, interval, lam) ** 2


def compute_a_n(dim, h, interval, lam, method="auto") -> float:
    """Largest root ``a_n`` of the level equation.

    ``method="closed"`` (``dim == 1`` only) uses
    ``sqrt(2 log((b - a)/h) + 2 log(sqrt(lam) / (2 pi)))``; ``"root"`` solves
    numerically on the decreasing branch ``a > sqrt(dim - 1)``.
    """
    interval = _as_interval(interval, dim)
    if not h > 0:
        raise BandwidthError("bandwidth must be positive")
    log_scale = _log_b1_scale(dim, h, interval, lam)
    if dim == 1 and method in ("auto", "closed"):
        a_sq = a_n_squared(dim, h, interval, lam)
        if a_sq <= 0:
            raise BandwidthError(
                f"bandwidth {h:g} is too large for a positive a_n on an interval of length "
                f"{measure(interval):g}; use a smaller bandwidth or a wider interval"
            )
        return float(np.sqrt(a_sq))
    if method not in ("auto", "root"):
        raise InputError(f"unknown method {method!r}")

    def f(a):
        return log_scale + (dim - 1) * np.log(a) - 0.5 * a * a

    peak = np.sqrt(dim - 1) if dim > 1 else 0.0
    f_peak = log_scale if dim == 1 else f(peak)
    if f_peak < 0 or (dim == 1 and f_peak == 0):
        raise BandwidthError(
            f"no solution for a_n with bandwidth {h:g}; use a smaller bandwidth"
        )
    if f_peak == 0:
        return float(peak)
    hi = max(2.0 * peak, 1.0)
    while f(hi) > 0:
        hi *= 2.0
    root = optimize.brentq(f, max(peak, 1e-300), hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                           maxiter=500)
    return float(root)


def _hermite_coefs(dim):
    """``h_{m,d-1} = (-1)^m (d-1)! / (m! 2^m (d-2m-1)!)`` for ``m = 0..floor((d-1)/2)``."""
    return [(-1) ** m * factorial(dim - 1) / (factorial(m) * 2**m * factorial(dim - 2 * m - 1))
            for m in range((dim - 1) // 2 + 1)]


def leading_term(t, a_n, dim, one_sided=False):
    """Leading term of the expansion, as a function of the ``t`` scale."""
    t = np.asarray(t, float)
    k = 1.0 if one_sided else 2.0
    r = 1.0 + t / a_n**2
    poly = sum(hm * a_n ** (-2 * m) * r ** (dim - 2 * m - 1)
               for m, hm in enumerate(_hermite_coefs(dim)))
    return np.exp(-k * np.exp(-t - t * t / (2.0 * a_n**2))) * poly


def _leading_term_c(c, a_n, dim, k):
    return leading_term(a_n * (c - a_n), a_n, dim, one_sided=(k == 1.0))


def _invert(alpha, a_n, dim, k, a_n_sq=None):
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    if dim not in (1, 2, 3):
        raise InputError("critical values are available for 1 to 3 dimensions")
    target = 1.0 - alpha
    if dim == 1:
        a_sq = a_n**2 if a_n_sq is None else a_n_sq
        if a_n_sq is None and not a_n > 0:
            raise InputError("a_n must be positive")
        c2 = a_sq - 2.0 * np.log(-np.log1p(-alpha) / k)
        if c2 <= 0:
            raise LevelUnattainableError(
                f"level {target:g} unattainable at a_n^2={a_sq:g}; no positive critical value"
            )
        return float(np.sqrt(c2))
    if not a_n > 0:
        raise InputError("a_n must be positive")

    # Rearranged inversion: the first crossing of 1 - alpha on c > 0 is the
    # smallest c at which the running maximum of F reaches the target.
    def gap(c):
        return float(_leading_term_c(c, a_n, dim, k)) - target

    step = 1e-3 * max(1.0, a_n)
    lo, c = 0.0, step
    while gap(c) < 0:
        lo, c = c, c + step
        if c > 1e3 * max(1.0, a_n):
            raise LevelUnattainableError(f"level {target:g} unattainable at a_n={a_n:g}")
        step *= 1.05
    return float(optimize.brentq(gap, lo, c, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def critical_two_sided(alpha, a_n, dim=1, a_n_sq=None) -> float:
    """Smallest ``c > 0`` where the two-sided leading term reaches ``1 - alpha``.

    For ``dim == 1`` pass ``a_n_sq`` to use a (possibly non-positive) squared
    level directly; ``a_n`` is then ignored.
    """
    return _invert(alpha, a_n, dim, 2.0, a_n_sq)


def critical_one_sided(alpha, a_n, dim=1, a_n_sq=None) -> float:
    return _invert(alpha, a_n, dim, 1.0, a_n_sq)


def critical_gumbel(alpha, a_n, one_sided=False) -> float:
    """``a_n + m / a_n`` with ``m = -log(log((1 - alpha)^(-1/k)))``."""
    k = 1.0 if one_sided else 2.0
    m = -np.log(-np.log1p(-alpha) / k)
    return float(a_n + m / a_n)


def critical_pointwise(alpha, one_sided=False) -> float:
    return float(stats.norm.ppf(1.0 - alpha if one_sided else 1.0 - alpha / 2.0))


def critical_value(flavor, alpha, a_n, dim=1, side="two_sided", a_n_sq=None) -> float:
    one_sided = side != "two_sided"
    if flavor == "uniform":
        fn = critical_one_sided if one_sided else critical_two_sided
        return fn(alpha, a_n, dim, a_n_sq)
    if flavor == "gumbel":
        if not a_n > 0:
            raise LevelUnattainableError("the Gumbel critical value needs a_n > 0")
        return critical_gumbel(alpha, a_n, one_sided)
    if flavor == "pointwise":
        return critical_pointwise(alpha, one_sided)
    raise InputError(f"unknown flavor {flavor!r}")


def band_bounds(g_hat, se, critical, side="two_sided"):
    lower = g_hat - critical * se
    upper = g_hat + critical * se
    if side == "one_sided_lower":
        upper = np.full_like(g_hat, np.inf)
    elif side == "one_sided_upper":
        lower = np.full_like(g_hat, -np.inf)
    return lower, upper


def make_grid(interval, grid_points=201):
    """Tensor grid of ``grid_points`` equally spaced values per coordinate, shape (m, d)."""
    iv = _as_interval(interval)
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in iv]
    return np.array(list(itertools.product(*axes)), dtype=float)


def assemble_band(psi, data, cfg: SmootherConfig, spec: BandSpec, dim_theta=0, grid=None) -> BandResult:
    """Evaluate the smoother on a grid over ``spec.interval`` and attach every flavor's
    critical value; ``lower``/``upper`` use ``spec.flavor``."""
    x = data.x if hasattr(data, "x") else np.asarray(data, float).reshape(len(data), -1)
    dim = x.shape[1]
    interval = _as_interval(spec.interval, dim)
    if np.any(interval[:, 0] < x.min(axis=0)) or np.any(interval[:, 1] > x.max(axis=0)):
        raise InputError("the band interval must lie within the range of the data")
    grid = make_grid(interval, spec.grid_points) if grid is None else np.asarray(grid, float).reshape(-1, dim)
    values = np.asarray(getattr(psi, "psi", psi), float)
    fit = smooth_with_se(x, values, grid, cfg.h, dim_theta, cfg.kernel)
    a_sq = a_n_squared(dim, cfg.h, interval, cfg.kernel.lam)
    a_n = float(np.sqrt(a_sq)) if a_sq > 0 else float("nan")
    criticals = {}
    for flavor in FLAVORS:
        try:
            criticals[flavor] = critical_value(flavor, spec.alpha, a_n, dim, spec.side,
                                               a_sq if dim == 1 else None)
        except LevelUnattainableError:
            if flavor == spec.flavor:
                raise
            criticals[flavor] = float("nan")
    crit = criticals[spec.flavor]
    lower, upper = band_bounds(fit["g_hat"], fit["se"], crit, spec.side)
    return BandResult(grid, fit["g_hat"], fit["se"], lower, upper, a_n, crit, cfg.h,
                      spec.flavor, spec.side, spec.alpha, criticals, a_sq)


def constancy_test(band: BandResult, psi, data, interval=None):
    """Reject a flat CATE on ``interval`` when the band misses the within-interval
    mean pseudo-outcome at some grid point.

    Returns ``{"reject": bool, "g_I": float}``.
    """
    x = data.x if hasattr(data, "x") else np.asarray(data, float).reshape(len(data), -1)
    iv = _as_interval(band.grid[[0, -1]].T if interval is None else interval, x.shape[1])
    inside = np.all((x >= iv[:, 0]) & (x <= iv[:, 1]), axis=1)
    if not inside.any():
        raise InputError("no observations inside the interval")
    g_i = float(np.mean(np.asarray(getattr(psi, "psi", psi), float)[inside]))
    reject = bool(np.any((band.lower > g_i) | (band.upper < g_i)))
    return {"reject": reject, "g_I": g_i}
