import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_local_linear, gauss, wls_local_linear

from drcate.bandwidth import select_bandwidth
from drcate.data import Dataset
from drcate.exceptions import DegenerateNeighborhoodError, InputError
from drcate.first_stage import fit_first_stage
from drcate.local_linear import (
    LocalLinearRegression, SmootherConfig, cond_variance, conditional_variance, density,
    density_estimate, fit_local_linear, local_linear, point_estimate, smooth_with_se,
    standard_error,
)
from drcate.monte_carlo import generate_dgp, scenario_specs
from drcate.pseudo_outcome import compute_psi

GAUSS_R = 1.0 / (2.0 * np.sqrt(np.pi))


@pytest.mark.parametrize("h", [0.05, 0.3, 2.0])
def test_affine_reproduction_example(rng, h):
    x = rng.uniform(-2, 2, 100)
    data = Dataset(np.zeros(100), np.zeros(100), x[:, None])
    cfg = SmootherConfig("gaussian", h)
    for x0 in (-1.0, 0.0, 0.7):
        g, slope = fit_local_linear(2 + 3 * x, data, cfg, x0)
        assert g == pytest.approx(2 + 3 * x0, abs=1e-8)
        assert slope[0] == pytest.approx(3.0, abs=1e-8)


def test_constant_response(rng):
    x = rng.standard_normal((80, 2))
    g, slope = local_linear(x, np.full(80, -4.25), [[0.1, 0.2], [1.0, -1.0]], 0.5,
                            return_slope=True)
    np.testing.assert_allclose(g, -4.25, atol=1e-10)
    np.testing.assert_allclose(slope, 0.0, atol=1e-8)


@pytest.mark.parametrize("seed", range(100))
def test_affine_reproduction_fuzzed(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    n = int(rng.integers(30, 200))
    x = rng.normal(0, rng.uniform(0.5, 3), (n, d))
    coef = rng.normal(0, 5, d + 1)
    y = coef[0] + x @ coef[1:]
    pts = rng.normal(0, 1, (15, d))
    h = rng.uniform(0.3, 2.0)
    kernel = ("gaussian", "biweight", "epanechnikov")[seed % 3] if d == 1 else "gaussian"
    if kernel != "gaussian":
        h = 2.0 + rng.uniform(0, 1)
    g, slope = local_linear(x, y, pts, h, kernel, return_slope=True)
    np.testing.assert_allclose(g, coef[0] + pts @ coef[1:], atol=1e-8, rtol=0)
    np.testing.assert_allclose(slope, np.broadcast_to(coef[1:], slope.shape), atol=1e-8)


@pytest.mark.parametrize("seed", range(100))
def test_matches_wls_oracle_fuzzed(seed):
    rng = np.random.default_rng(1000 + seed)
    d = int(rng.integers(1, 4))
    n = int(rng.integers(50, 300))
    x = rng.standard_normal((n, d))
    y = np.sin(x.sum(axis=1)) + rng.standard_normal(n)
    x0 = rng.uniform(-1, 1, d)
    h = rng.uniform(0.3, 1.5)
    g, slope = local_linear(x, y, x0[None, :], h, return_slope=True)
    g_ref, slope_ref = wls_local_linear(x, y, x0, h)
    assert g[0] == pytest.approx(g_ref, abs=1e-8, rel=1e-8)
    np.testing.assert_allclose(slope[0] * h, slope_ref * h, atol=1e-8, rtol=1e-8)


def test_wls_oracle_n200_at_zero():
    rng = np.random.default_rng(200)
    x = rng.standard_normal(200)
    y = x**2 + rng.standard_normal(200)
    g = local_linear(x, y, [0.0], 0.4)
    assert g[0] == pytest.approx(wls_local_linear(x, y, 0.0, 0.4)[0], abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force_minimizer(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 21))
    x = rng.uniform(-1, 1, n)
    y = rng.standard_normal(n)
    g, slope = local_linear(x, y, [0.1], 0.5, return_slope=True)
    # Start the search from the unweighted fit so it cannot see the answer.
    start = np.polyfit(x - 0.1, y, 1)[::-1]
    best, width = brute_force_local_linear(x, y, 0.1, 0.5, start, 10.0)
    assert g[0] == pytest.approx(best[0], abs=2 * width + 1e-9)
    assert slope[0, 0] == pytest.approx(best[1], abs=2 * width + 1e-9)


@given(st.floats(-1e3, 1e3))
def test_shift_equivariance(c):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(60)
    y = rng.standard_normal(60)
    pts = [-1.0, 0.0, 0.5]
    np.testing.assert_allclose(local_linear(x, y + c, pts, 0.4),
                               local_linear(x, y, pts, 0.4) + c, atol=1e-9 * (1 + abs(c)))


def test_vanishing_weights_raise():
    x = np.linspace(0, 1, 20)
    with pytest.raises(DegenerateNeighborhoodError, match="x="):
        local_linear(x, x, [5.0], 0.1, "epanechnikov")


def test_singular_system_raises_unless_fallback():
    x = np.array([0.0, 0.0, 0.0, 10.0])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(DegenerateNeighborhoodError):
        local_linear(x, y, [0.0], 0.3, "epanechnikov")
    g = local_linear(x, y, [0.0], 0.3, "epanechnikov", constant_fallback=True)
    assert g[0] == pytest.approx(2.0)


def test_density_at_atom():
    x = np.zeros((10, 1))
    data = Dataset(np.zeros(10), np.zeros(10), x)
    assert density_estimate(data, SmootherConfig("gaussian", 0.25), 0.0) == pytest.approx(
        gauss(0.0) / 0.25)


def test_density_far_away_compact_kernel():
    assert density(np.linspace(0, 1, 30), [4.0], 0.5, "biweight")[0] == 0.0


def test_density_standard_normal():
    x = np.random.default_rng(11).standard_normal(5000)
    assert density(x, [0.0], 0.3)[0] == pytest.approx(1 / np.sqrt(2 * np.pi), abs=0.03)


def test_cond_variance_zero_residuals(rng):
    x = rng.standard_normal(50)
    assert conditional_variance(x, np.zeros(50), [0.0], 0.5)[0] == 0.0


@pytest.mark.parametrize("v", [0.5, 2.0])
def test_cond_variance_atom(v):
    x = np.zeros(25)
    data = Dataset(np.zeros(25), np.zeros(25), x[:, None])
    cfg = SmootherConfig("gaussian", 0.3)
    assert cond_variance(np.full(25, np.sqrt(v)), data, cfg, np.zeros(25), 0, 0.0) == (
        pytest.approx(v))


def test_standard_error_examples():
    assert standard_error(0.4, 0.0, 1000, 0.2) == 0.0
    assert standard_error(0.4, 1.0, 1000, 0.2) == pytest.approx(0.05938, abs=5e-6)
    assert standard_error(0.4, 1.0, 1000, 0.2) ** 2 == pytest.approx(
        GAUSS_R / (1000 * 0.2 * 0.4), rel=1e-12)


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.integers(10, 10**6), st.floats(0.01, 2),
       st.integers(1, 3))
def test_standard_error_scaling(f, s2, n, h, d):
    se = standard_error(f, s2, n, h, d)
    assert standard_error(f, s2, 2 * n, h, d) ** 2 == pytest.approx(se**2 / 2, rel=1e-12)
    assert standard_error(f, 4 * s2, n, h, d) == pytest.approx(2 * se, rel=1e-12)
    assert se == pytest.approx(np.sqrt(GAUSS_R**d * s2 / (n * h**d * f)), rel=1e-12)
    assert se > 0


def test_standard_error_needs_positive_density():
    with pytest.raises(InputError):
        standard_error(0.0, 1.0, 10, 0.5)


def test_smooth_with_se_consistent_with_pieces(rng):
    x = rng.standard_normal(300)
    y = x + rng.standard_normal(300)
    out = smooth_with_se(x, y, [0.0, 0.5], 0.4, dim_theta=3)
    resid = y - local_linear(x, y, x, 0.4)
    np.testing.assert_allclose(out["f_hat"], density(x, [0.0, 0.5], 0.4))
    np.testing.assert_allclose(out["sigma2"], conditional_variance(x, resid, [0.0, 0.5], 0.4, 3))
    np.testing.assert_allclose(out["se"], standard_error(out["f_hat"], out["sigma2"], 300, 0.4))
    assert np.all(out["se"] > 0)


def test_point_estimate_fields(rng):
    x = rng.standard_normal(100)
    data = Dataset(np.zeros(100), np.zeros(100), x[:, None])
    est = point_estimate(x**2, data, SmootherConfig("gaussian", 0.5), 0.0)
    assert est.se >= 0 and est.f_hat >= 0 and est.sigma2_hat >= 0
    assert 0 < est.effective_n <= 100


def test_smoother_config_validation():
    with pytest.raises(InputError):
        SmootherConfig("gaussian", 0.0)
    with pytest.raises(InputError):
        SmootherConfig("gaussian", 0.5, 4)
    with pytest.raises(InputError):
        SmootherConfig("cosine", 0.5)


def test_regressor_api(rng):
    x = rng.uniform(-1, 1, (200, 1))
    y = 1 + 2 * x[:, 0] + 0.1 * rng.standard_normal(200)
    model = LocalLinearRegression(bandwidth=0.3).fit(x, y)
    assert model.score(x, y) > 0.9
    assert model.predict_with_se(x[:5])["se"].shape == (5,)
    plug = LocalLinearRegression(kernel="epanechnikov").fit(x, y)
    assert plug.bandwidth_ == pytest.approx(select_bandwidth(x, y, kernel="epanechnikov").h_n)


@pytest.mark.slow
def test_ase_at_n2000_matches_simulation_scale():
    ases = []
    for rep in range(200):
        data = generate_dgp(10, 2000, np.random.default_rng([2000, rep]))
        fit = fit_first_stage(data, *scenario_specs("tt", 10))
        psi = compute_psi(data, fit, "dr").psi
        h = select_bandwidth(data.x, psi).h_n
        ases.append(smooth_with_se(data.x, psi, [0.0], h, fit.dim_theta)["se"][0])
    assert np.mean(ases) == pytest.approx(0.081, abs=0.015)
