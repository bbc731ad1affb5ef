import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from drcate.exceptions import InputError
from drcate.kernels import (
    KERNELS,
    eval_kernel,
    eval_product_kernel,
    get_kernel,
    kernel_lambda,
    rho,
    roughness,
)


def support(kind):
    return (-np.inf, np.inf) if kind == "gaussian" else (-1.0, 1.0)


def quad(f, kind):
    lo, hi = support(kind)
    return integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def test_gaussian_values():
    assert eval_kernel("gaussian", 0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert eval_kernel("gaussian", 1.0) == pytest.approx(0.2419707, abs=1e-7)


def test_compact_outside_support():
    assert eval_kernel("epanechnikov", 2.0) == 0.0
    assert eval_kernel("biweight", -1.5) == 0.0


def test_product_kernel_values():
    assert eval_product_kernel("gaussian", [0.0, 0.0]) == pytest.approx(1 / (2 * np.pi))
    assert eval_product_kernel("gaussian", [1.0, -1.0]) == pytest.approx(0.0585498, abs=1e-7)
    assert eval_product_kernel("epanechnikov", [0.2, 3.0]) == 0.0


@pytest.mark.parametrize("kind", KERNELS)
def test_product_kernel_one_dim_equals_kernel(kind):
    u = np.linspace(-2, 2, 41)
    np.testing.assert_array_equal(eval_product_kernel(kind, u[:, None]), eval_kernel(kind, u))


@pytest.mark.parametrize("kind", KERNELS)
def test_moments_by_quadrature(kind):
    spec = get_kernel(kind)
    assert quad(lambda u: eval_kernel(spec, u), kind) == pytest.approx(1.0, abs=1e-8)
    assert abs(quad(lambda u: u * eval_kernel(spec, u), kind)) < 1e-8
    assert quad(lambda u: eval_kernel(spec, u) ** 2, kind) == pytest.approx(spec.r_k, abs=1e-8)
    assert quad(lambda u: u * u * eval_kernel(spec, u), kind) == pytest.approx(spec.mu2, abs=1e-8)
    assert roughness(spec, 3) == pytest.approx(spec.r_k**3)


@pytest.mark.parametrize("kind", KERNELS)
def test_symmetric_and_nonnegative(kind):
    u = np.linspace(-3, 3, 601)
    k = eval_kernel(kind, u)
    np.testing.assert_array_equal(k, eval_kernel(kind, -u))
    assert np.all(k >= 0)


@pytest.mark.parametrize("kind", ["gaussian", "epanechnikov"])
def test_lambda_matches_stated_values(kind):
    assert kernel_lambda(kind) == {"gaussian": 0.5, "epanechnikov": 2.5}[kind]


def test_biweight_lambda_is_the_quadrature_value():
    # int K'^2 / int K^2 = (15/7) / (5/7) for the biweight.
    k1 = lambda u: 15 / 16 * 2 * (1 - u * u) * (-2 * u)  # noqa: E731
    value = quad(lambda u: k1(u) ** 2, "biweight") / quad(lambda u: eval_kernel("biweight", u) ** 2, "biweight")
    assert value == pytest.approx(3.0, abs=1e-10)
    assert kernel_lambda("biweight") == pytest.approx(value)


def test_rho_gaussian_examples():
    assert rho("gaussian", 0.0) == 1.0
    assert rho("gaussian", 2.0) == pytest.approx(np.exp(-1.0), abs=1e-7)


@pytest.mark.parametrize("kind", KERNELS)
@pytest.mark.parametrize("s", [0.0, 0.3, 0.9, 1.5, 2.5])
def test_rho_matches_numerical_convolution(kind, s):
    lo, hi = support(kind)
    num = integrate.quad(lambda u: eval_kernel(kind, u) * eval_kernel(kind, u - s), lo, hi,
                         points=None if kind == "gaussian" else [s - 1, s, 1.0 - 1e-12])[0]
    assert rho(kind, s) == pytest.approx(num / get_kernel(kind).r_k, abs=1e-9)


@pytest.mark.parametrize("kind", KERNELS)
def test_minus_rho_second_derivative_is_lambda(kind):
    e = 1e-4
    second = (rho(kind, e) - 2 * rho(kind, 0.0) + rho(kind, -e)) / e**2
    assert -second == pytest.approx(kernel_lambda(kind), abs=1e-3)


@given(st.sampled_from(KERNELS), st.floats(-4, 4))
def test_rho_is_symmetric_and_bounded(kind, s):
    assert rho(kind, s) == pytest.approx(rho(kind, -s), abs=1e-12)
    assert abs(rho(kind, s)) <= 1 + 1e-12


def test_unknown_kernel():
    with pytest.raises(InputError):
        get_kernel("triangular")
