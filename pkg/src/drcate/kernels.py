"""Second-order kernels and the analytic constants used by the smoother and
the critical values.

``lam`` is ``-int K K'' / int K^2``, which for a product kernel is also the
per-coordinate curvature of the normalised autocorrelation ``rho`` at zero.
The Gaussian kernel is the default even though the asymptotic theory asks
for a compactly supported, six times differentiable kernel; the compact
kernels are provided for users who want to stay inside those assumptions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .exceptions import InputError

_SQRT_2PI = np.sqrt(2.0 * np.pi)

KERNELS = ("gaussian", "biweight", "epanechnikov")


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    r_k: float  # int K^2
    mu2: float  # int u^2 K
    lam: float
    support: float  # half-width; inf for the Gaussian

    def __call__(self, u):
        return eval_kernel(self, u)


# Polynomial pieces on [-1, 1] for the compact kernels.
_POLY = {
    "biweight": Polynomial([1.0, 0.0, -2.0, 0.0, 1.0]) * (15.0 / 16.0),
    "epanechnikov": Polynomial([1.0, 0.0, -1.0]) * 0.75,
}

_SPECS = {
    "gaussian": KernelSpec("gaussian", 1.0 / (2.0 * np.sqrt(np.pi)), 1.0, 0.5, np.inf),
    # -int K K'' = int K'^2 = 15/7 and int K^2 = 5/7.
    "biweight": KernelSpec("biweight", 5.0 / 7.0, 1.0 / 7.0, 3.0, 1.0),
    # K'' = -3/2 on (-1, 1); the jump in K' sits where K = 0.
    "epanechnikov": KernelSpec("epanechnikov", 0.6, 0.2, 2.5, 1.0),
}


def get_kernel(kind="gaussian") -> KernelSpec:
    if isinstance(kind, KernelSpec):
        return kind
    try:
        return _SPECS[str(kind).lower()]
    except KeyError:
        raise InputError(f"unknown kernel {kind!r}; choose from {', '.join(KERNELS)}") from None


def eval_kernel(spec, u):
    spec = get_kernel(spec)
    u = np.asarray(u, dtype=float)
    if spec.kind == "gaussian":
        out = np.exp(-0.5 * u * u) / _SQRT_2PI
    else:
        out = np.where(np.abs(u) <= 1.0, _POLY[spec.kind](u), 0.0)
    return out if out.ndim else float(out)


def eval_product_kernel(spec, s):
    """Product kernel over the last axis of ``s``."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = s[None]
    return np.prod(eval_kernel(spec, s), axis=-1)


def kernel_lambda(spec) -> float:
    return get_kernel(spec).lam


def roughness(spec, dim=1) -> float:
    """``int K^2`` of the ``dim``-fold product kernel."""
    return get_kernel(spec).r_k ** dim


def rho(spec, s):
    """Normalised kernel autocorrelation ``int K(u) K(u - s) du / int K^2``."""
    spec = get_kernel(spec)
    s = np.asarray(s, dtype=float)
    if spec.kind == "gaussian":
        out = np.exp(-0.25 * s * s)
    else:
        poly = _POLY[spec.kind]
        flat = np.abs(s).ravel()
        out = np.zeros_like(flat)
        for i, si in enumerate(flat):
            if si >= 2.0:
                continue
            shifted = poly(Polynomial([-si, 1.0]))
            anti = (poly * shifted).integ()
            out[i] = (anti(1.0) - anti(si - 1.0)) / spec.r_k
        out = out.reshape(s.shape)
    return out if out.ndim else float(out)
