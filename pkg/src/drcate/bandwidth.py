"""Direct plug-in bandwidth for local linear regression (Ruppert, Sheather and
Wand, 1995) and the undersmoothing adjustment applied before building bands.

The selector is the unbinned version of the three-stage procedure: a blocked
quartic pilot (number of blocks by Mallows' C_p), a local cubic estimate of
the integrated squared second derivative, and a local linear residual
variance with a hat-matrix degrees-of-freedom correction. The pilot stages
use the Gaussian kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BandwidthError, InputError, RankDeficiencyError
from .first_stage import least_squares
from .kernels import get_kernel

logger = logging.getLogger(__name__)

SQRT_PI = np.sqrt(np.pi)
# Leading constant of the final bandwidth, (1 / (2 sqrt(pi)))^(1/5).
H_CONST = (1.0 / (2.0 * SQRT_PI)) ** 0.2
# Pilot constants for the local cubic bandwidth, by the sign of theta24.
C2_NEG = (3.0 / (8.0 * SQRT_PI)) ** (1.0 / 7.0)
C2_POS = (15.0 / (16.0 * SQRT_PI)) ** (1.0 / 7.0)
# Residual-variance pilot constant; sqrt(2 pi) divides the whole bracket.
C3 = (4.0 * (0.5 + 2.0 * np.sqrt(2.0) - (4.0 / 3.0) * np.sqrt(3.0)) / np.sqrt(2.0 * np.pi)) ** (1.0 / 9.0)

MIN_BLOCK = 5
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class PluginState:
    n_blocks: int
    theta24_q: float
    sigma2_q: float
    g1: float
    theta22: float
    g2: float
    sigma2: float
    h_dpi: float
    h_n: float
    coordinates: tuple = field(default=(), compare=False)


def undersmoothed(h, n):
    """``h * n^(1/5) * n^(-2/7)``."""
    return h * n ** (-3.0 / 35.0)


def n_blocks_max(n):
    return max(min(n // 20, 5), 1)


def _sorted(x, psi):
    x = np.asarray(x, float).ravel()
    psi = np.asarray(psi, float).ravel()
    if x.shape != psi.shape:
        raise InputError("x and psi differ in length")
    order = np.argsort(x, kind="stable")
    return x[order], psi[order]


def _block_slices(n, n_blocks):
    size = n // n_blocks
    bounds = [j * size for j in range(n_blocks)] + [n]
    return [slice(bounds[j], bounds[j + 1]) for j in range(n_blocks)]


def _quartic_blocks(xs, ys, n_blocks):
    """Residual sum of squares and per-point 2nd/4th derivatives of the blocked quartic."""
    n = xs.size
    resid2 = 0.0
    m2 = np.empty(n)
    m4 = np.empty(n)
    for sl in _block_slices(n, n_blocks):
        xb = xs[sl]
        if xb.size < MIN_BLOCK:
            raise BandwidthError(f"block with {xb.size} points cannot support a quartic fit")
        # Centre and scale the block so the polynomial basis stays well conditioned.
        mid = 0.5 * (xb[0] + xb[-1])
        half = 0.5 * (xb[-1] - xb[0])
        if not half > 0:
            raise BandwidthError("quartic block has no spread in x (too many tied values)")
        v = (xb - mid) / half
        design = np.vander(v, 5, increasing=True)
        try:
            b = least_squares(design, ys[sl])
        except RankDeficiencyError:
            raise BandwidthError("singular quartic block design (too many tied x values)") from None
        resid2 += float(np.sum((ys[sl] - design @ b) ** 2))
        m2[sl] = (2 * b[2] + 6 * b[3] * v + 12 * b[4] * v**2) / half**2
        m4[sl] = 24 * b[4] / half**4
    return resid2, m2, m4


def mallows_cp(x, psi):
    """C_p(N) for every feasible block count ``N = 1..N_max``; index 0 is N=1."""
    xs, ys = _sorted(x, psi)
    n = xs.size
    feasible = [N for N in range(1, n_blocks_max(n) + 1) if n // N >= MIN_BLOCK]
    if not feasible:
        raise BandwidthError(f"{n} observations are too few for a quartic pilot fit")
    rss = np.array([_quartic_blocks(xs, ys, N)[0] for N in feasible])
    n_max = feasible[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rss[-1] > 0, rss / rss[-1], np.where(rss > 0, np.inf, 1.0))
    blocks = np.array(feasible)
    return blocks, ratio * (n - n_max) - (n - 10 * blocks)


def choose_blocks(x, psi) -> int:
    blocks, cp = mallows_cp(x, psi)
    return int(blocks[np.argmin(cp)])


def blocked_quartic_stage(x, psi, n_blocks):
    """``(theta24_q, sigma2_q)`` from a quartic fitted separately on each block."""
    xs, ys = _sorted(x, psi)
    n = xs.size
    if n <= 5 * n_blocks:
        raise BandwidthError(f"need more than {5 * n_blocks} observations for {n_blocks} blocks")
    rss, m2, m4 = _quartic_blocks(xs, ys, n_blocks)
    return float(np.mean(m2 * m4)), rss / (n - 5 * n_blocks)


def _gauss(u):
    return np.exp(-0.5 * u * u)


def _local_poly_moments(xs, ys, h, degree):
    """Local polynomial coefficients (in units of ``(x_j - x_i)/h``) at every data point."""
    n = xs.size
    coefs = np.empty((n, degree + 1))
    idx = np.arange(degree + 1)
    step = max(1, _CHUNK_ELEMENTS // n)
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        u = (xs[None, :] - xs[sl, None]) / h
        term = _gauss(u)
        s = np.empty((u.shape[0], 2 * degree + 1))
        t = np.empty((u.shape[0], degree + 1))
        for k in range(2 * degree + 1):
            s[:, k] = term.sum(axis=1)
            if k <= degree:
                t[:, k] = term @ ys
            term = term * u
        a = s[:, idx[:, None] + idx[None, :]]
        try:
            coefs[sl] = np.linalg.solve(a, t[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise BandwidthError(f"singular local degree-{degree} system at pilot bandwidth {h:g}") from None
    return coefs


def local_cubic_stage(x, psi, theta24_q, sigma2_q, a=None, b=None, return_pilot=False):
    """Trimmed mean squared second derivative from a local cubic pilot."""
    xs, ys = _sorted(x, psi)
    n = xs.size
    a = xs[0] if a is None else a
    b = xs[-1] if b is None else b
    if theta24_q != 0 and sigma2_q > 0:
        c2 = C2_NEG if theta24_q < 0 else C2_POS
        g1 = c2 * (sigma2_q * (b - a) / (abs(theta24_q) * n)) ** (1.0 / 7.0)
    else:
        g1 = (b - a) * n ** (-1.0 / 7.0)
        logger.warning("degenerate quartic pilot (theta24=%g, sigma2=%g); using g1=%g",
                       theta24_q, sigma2_q, g1)
    coefs = _local_poly_moments(xs, ys, g1, 3)
    m2 = 2.0 * coefs[:, 2] / g1**2
    inside = (xs > 0.95 * a + 0.05 * b) & (xs < 0.05 * a + 0.95 * b)
    theta22 = float(np.sum(m2[inside] ** 2) / n)
    return (theta22, g1) if return_pilot else theta22


def residual_variance(x, psi, g2):
    """Local linear residual variance with the ``n - 2 tr(W) + tr(W'W)`` correction."""
    xs, ys = _sorted(x, psi)
    n = xs.size
    fitted = np.empty(n)
    diag = np.empty(n)
    row_sq = np.empty(n)
    step = max(1, _CHUNK_ELEMENTS // n)
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        u = (xs[None, :] - xs[sl, None]) / g2
        w = _gauss(u)
        s0 = w.sum(axis=1)
        s1 = (w * u).sum(axis=1)
        s2 = (w * u * u).sum(axis=1)
        det = s0 * s2 - s1 * s1
        # Isolated points get the local constant fit.
        flat = det <= 1e-12 * (s0 + s2) ** 2
        safe = np.where(flat, 1.0, det)
        hat = np.where(flat[:, None], w / s0[:, None],
                       w * (s2[:, None] - s1[:, None] * u) / safe[:, None])
        fitted[sl] = hat @ ys
        diag[sl] = hat[np.arange(hat.shape[0]), np.arange(sl.start, sl.stop)]
        row_sq[sl] = np.sum(hat * hat, axis=1)
    dof = n - 2.0 * diag.sum() + row_sq.sum()
    if not dof > 0:
        raise BandwidthError(
            f"residual variance pilot bandwidth {g2:g} interpolates the data (no residual "
            "degrees of freedom); is the response noiseless?"
        )
    return float(np.sum((ys - fitted) ** 2) / dof)


def final_bandwidth(x, psi, theta22, sigma2_q, a=None, b=None, return_state=False):
    """``(h_dpi, h_n, n)``: the plug-in bandwidth and its undersmoothed version."""
    xs, ys = _sorted(x, psi)
    n = xs.size
    a = xs[0] if a is None else a
    b = xs[-1] if b is None else b
    if not theta22 > 0:
        raise BandwidthError(f"non-positive curvature estimate theta22={theta22}")
    g2 = C3 * (sigma2_q**2 * (b - a) / (theta22**2 * n**2)) ** (1.0 / 9.0)
    if not g2 > 0:
        raise BandwidthError("non-positive residual-variance pilot bandwidth")
    sigma2 = residual_variance(xs, ys, g2)
    h_dpi = H_CONST * (sigma2 * (b - a) / (theta22 * n)) ** 0.2
    if return_state:
        return h_dpi, undersmoothed(h_dpi, n), n, g2, sigma2
    return h_dpi, undersmoothed(h_dpi, n), n


def direct_plugin(x, psi, a=None, b=None, trim=0.01) -> PluginState:
    """Run all three stages on univariate ``x``.

    ``trim`` drops that share of observations from each end of the sorted
    ``x`` before fitting (the KernSmooth ``dpill`` default is 0.01); ``[a, b]``
    defaults to the range of the untrimmed ``x``.
    """
    xs, ys = _sorted(x, psi)
    if xs[-1] <= xs[0]:
        raise BandwidthError("x has no spread")
    if not 0.0 <= trim < 0.5:
        raise InputError("trim must lie in [0, 0.5)")
    a = xs[0] if a is None else float(a)
    b = xs[-1] if b is None else float(b)
    n = xs.size
    k = int(np.floor(trim * n))
    if k:
        xs, ys = xs[k:-k], ys[k:-k]
    n_blocks = choose_blocks(xs, ys)
    theta24, sigma2_q = blocked_quartic_stage(xs, ys, n_blocks)
    theta22, g1 = local_cubic_stage(xs, ys, theta24, sigma2_q, a, b, return_pilot=True)
    h_dpi, _, _, g2, sigma2 = final_bandwidth(xs, ys, theta22, sigma2_q, a, b, return_state=True)
    return PluginState(n_blocks, theta24, sigma2_q, g1, theta22, g2, sigma2, h_dpi,
                       undersmoothed(h_dpi, n))


def _canonical_ratio(kernel):
    """Factor converting a Gaussian-kernel bandwidth to an equivalent one for ``kernel``."""
    k, g = get_kernel(kernel), get_kernel("gaussian")
    return ((k.r_k / k.mu2**2) / (g.r_k / g.mu2**2)) ** 0.2


def select_bandwidth(x, psi, undersmooth=True, kernel="gaussian", trim=0.01) -> PluginState:
    """Plug-in bandwidth for one to three smoothing coordinates.

    With several coordinates the selector runs on each marginal smooth and the
    geometric mean of the per-coordinate bandwidths is shared by all of them.
    ``h_n`` is the undersmoothed bandwidth, or equal to ``h_dpi`` when
    ``undersmooth`` is False. The undersmoothing factor uses the full
    sample size.
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    states = tuple(direct_plugin(x[:, j], psi, trim=trim) for j in range(d))
    ratio = _canonical_ratio(kernel)
    h = float(np.exp(np.mean([np.log(s.h_dpi) for s in states]))) * ratio
    h_n = undersmoothed(h, n) if undersmooth else h
    if d == 1:
        s = states[0]
        return PluginState(s.n_blocks, s.theta24_q, s.sigma2_q, s.g1, s.theta22, s.g2,
                           s.sigma2, h, h_n)
    nan = float("nan")
    return PluginState(0, nan, nan, nan, nan, nan, nan, h, h_n, states)
