"""Monte Carlo harness: simulated designs, specification scenarios and the
estimator / band-coverage summary tables.

Replication ``r`` draws its data from ``SeedSequence(seed, spawn_key=(r,))``,
so every scenario sees the same simulated samples and the output does not
depend on how replications are spread over worker processes.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from .bands import a_n_squared, critical_gumbel, critical_two_sided
from .bandwidth import select_bandwidth
from .data import Dataset, DesignSpec
from .exceptions import DRCateError, InputError, SimulationAbortedError
from .first_stage import fit_first_stage
from .kernels import get_kernel
from .local_linear import smooth_with_se
from .pseudo_outcome import ESTIMATORS, compute_psi, dim_theta

logger = logging.getLogger(__name__)

SCENARIOS = ("tt", "tf", "ft", "ff")
MAX_FAILURE_SHARE = 0.05


@dataclass(frozen=True)
class McConfig:
    """Simulation settings.

    ``scenario`` is two letters, propensity model then outcome regression,
    each ``t`` (correct) or ``f`` (second half of the covariates omitted).
    """

    p: int = 10
    n: int = 500
    reps: int = 500
    seed: int = 0
    scenario: str = "tt"
    eval_points: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)
    alpha_levels: tuple = (0.01, 0.05, 0.10)
    coverage_interval: tuple = (-1.0, 1.0)
    coverage_grid: int = 101
    kernel: str = "gaussian"
    trim_eps: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "scenario", str(self.scenario).lower())
        object.__setattr__(self, "eval_points", tuple(float(v) for v in self.eval_points))
        object.__setattr__(self, "alpha_levels", tuple(float(v) for v in self.alpha_levels))
        object.__setattr__(self, "coverage_interval", tuple(float(v) for v in self.coverage_interval))
        if self.p < 2 or self.p % 2:
            raise InputError("p must be a positive even number")
        if self.n < 20:
            raise InputError("n must be at least 20")
        if self.reps < 1:
            raise InputError("reps must be at least 1")
        if self.scenario not in SCENARIOS:
            raise InputError(f"scenario must be one of {SCENARIOS}")
        if not self.eval_points:
            raise InputError("eval_points must be nonempty")
        if not all(0 < a < 1 for a in self.alpha_levels):
            raise InputError("alpha levels must lie in (0, 1)")
        lo, hi = self.coverage_interval
        if not lo < hi or self.coverage_grid < 2:
            raise InputError("invalid coverage interval or grid")


@dataclass
class McReport:
    config: McConfig
    estimates: pd.DataFrame
    coverage: pd.DataFrame
    n_success: int
    n_failures: int
    failure_codes: dict = field(default_factory=dict)
    mean_bandwidth: dict = field(default_factory=dict)
    mean_a_n_sq: float = float("nan")

    def metadata(self):
        return {
            "config": asdict(self.config),
            "n_success": self.n_success,
            "n_failures": self.n_failures,
            "failure_codes": dict(sorted(self.failure_codes.items())),
            "mean_bandwidth": self.mean_bandwidth,
            "mean_a_n_sq": self.mean_a_n_sq,
        }


def true_catef(x1, p):
    return 10.0 + np.asarray(x1, float) / np.sqrt(p)


def generate_dgp(p, n, rng) -> Dataset:
    """Normal covariates, treated outcome linear in all of them, zero control
    outcome, and a logit assignment driven by columns ``p/2 - 1 .. p - 1``."""
    if p < 2 or p % 2:
        raise InputError("p must be a positive even number")
    z = rng.standard_normal((n, p))
    v = rng.standard_normal(n)
    u = rng.uniform(size=n)
    y1 = 10.0 + z.sum(axis=1) / np.sqrt(p) + v
    index = z[:, p // 2 - 1:].sum(axis=1) / np.sqrt(p / 2)
    d = (expit(index) > u).astype(float)
    return Dataset(d * y1, d, z, (0,))


def scenario_specs(scenario, p):
    """``(reg_spec, ps_spec)`` for a two-letter scenario code."""
    scenario = scenario.lower()
    if scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {scenario!r}")
    full = DesignSpec.linear(range(p))
    half = DesignSpec.linear(range(p // 2))
    ps = full if scenario[0] == "t" else half
    reg = full if scenario[1] == "t" else half
    return reg, ps


def _rng(seed, rep):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def _one_replication(cfg: McConfig, rep: int):
    """Raw per-replication output, or ``(code, message)`` on failure."""
    try:
        data = generate_dgp(cfg.p, cfg.n, _rng(cfg.seed, rep))
        reg, ps = scenario_specs(cfg.scenario, cfg.p)
        fit = fit_first_stage(data, reg, ps)
        kernel = get_kernel(cfg.kernel)
        x = data.x
        pts = np.asarray(cfg.eval_points)
        lo, hi = cfg.coverage_interval
        grid = np.linspace(lo, hi, cfg.coverage_grid)
        g_grid = true_catef(grid, cfg.p)
        out = {"g_hat": [], "se": [], "h": []}
        for est in ESTIMATORS:
            psi = compute_psi(data, fit, est, cfg.trim_eps).psi
            h = select_bandwidth(x, psi, undersmooth=True, kernel=kernel).h_n
            sm = smooth_with_se(x, psi, pts, h, dim_theta(fit, est), kernel)
            out["g_hat"].append(sm["g_hat"])
            out["se"].append(sm["se"])
            out["h"].append(h)
            if est == "dr":
                band = smooth_with_se(x, psi, grid, h, fit.dim_theta, kernel)
                a_sq = a_n_squared(1, h, [lo, hi], kernel.lam)
                t_max = np.max(np.abs(band["g_hat"] - g_grid) / band["se"])
                inside = (x[:, 0] >= lo) & (x[:, 0] <= hi)
                g_i = psi[inside].mean()
                dev_i = np.max(np.abs(band["g_hat"] - g_i) / band["se"])
                crit = np.array([critical_two_sided(a, None, 1, a_sq) for a in cfg.alpha_levels])
                # The Gumbel value needs a_n itself, so it is undefined when a_n^2 <= 0.
                if a_sq > 0:
                    gumb = np.array([critical_gumbel(a, np.sqrt(a_sq)) for a in cfg.alpha_levels])
                    gcovered = (t_max <= gumb).astype(float)
                else:
                    gcovered = np.full(len(cfg.alpha_levels), np.nan)
                out.update(a_n_sq=a_sq, crit=crit, covered=t_max <= crit, gcovered=gcovered,
                           reject=dev_i > crit)
        out["g_hat"] = np.array(out["g_hat"])
        out["se"] = np.array(out["se"])
        out["h"] = np.array(out["h"])
        return out
    except DRCateError as exc:
        return (exc.code, str(exc))
    except np.linalg.LinAlgError as exc:
        return ("LINALG", str(exc))


def _run_chunk(args):
    cfg, reps = args
    return [_one_replication(cfg, r) for r in reps]


def _collect(cfg: McConfig, workers=1):
    reps = list(range(cfg.reps))
    if workers <= 1 or cfg.reps == 1:
        return _run_chunk((cfg, reps))
    n_chunks = min(cfg.reps, 4 * workers)
    chunks = [reps[i::n_chunks] for i in range(n_chunks)]
    results = [None] * cfg.reps
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for chunk, res in zip(chunks, pool.map(_run_chunk, [(cfg, c) for c in chunks])):
            for r, out in zip(chunk, res):
                results[r] = out
    return results


def _nanmean(a):
    counts = np.sum(~np.isnan(a), axis=0)
    sums = np.nansum(a, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def summarize(cfg: McConfig, results) -> McReport:
    ok = [r for r in results if isinstance(r, dict)]
    failed = [r for r in results if not isinstance(r, dict)]
    codes = Counter(code for code, _ in failed)
    if len(failed) > MAX_FAILURE_SHARE * cfg.reps:
        raise SimulationAbortedError(
            f"{len(failed)} of {cfg.reps} replications failed ({dict(codes)}); aborting"
        )
    if not ok:
        raise SimulationAbortedError("no successful replications")
    g_hat = np.stack([r["g_hat"] for r in ok])  # (reps, estimators, points)
    se = np.stack([r["se"] for r in ok])
    err = g_hat - true_catef(cfg.eval_points, cfg.p)
    bias = err.mean(axis=0)
    sd = err.std(axis=0)
    ase = se.mean(axis=0)
    rmse = np.sqrt(np.mean(err**2, axis=0))
    est = {"x": list(cfg.eval_points)}
    for k, name in enumerate(ESTIMATORS):
        tag = name.upper()
        est[f"{tag}_BIAS"] = bias[k]
        est[f"{tag}_SD"] = sd[k]
        est[f"{tag}_ASE"] = ase[k]
        est[f"{tag}_RMSE"] = rmse[k]
    crit = np.stack([r["crit"] for r in ok])
    cov = {
        "alpha": list(cfg.alpha_levels),
        "CP": np.mean([r["covered"] for r in ok], axis=0),
        "Mcri": crit.mean(axis=0),
        "Sdcri": crit.std(axis=0),
        "GCP": _nanmean(np.array([r["gcovered"] for r in ok])),
        "GN": np.sum(~np.isnan([r["gcovered"] for r in ok]), axis=0),
        "REJ": np.mean([r["reject"] for r in ok], axis=0),
    }
    h = np.stack([r["h"] for r in ok]).mean(axis=0)
    return McReport(cfg, pd.DataFrame(est), pd.DataFrame(cov), len(ok), len(failed),
                    dict(codes), {name: float(h[k]) for k, name in enumerate(ESTIMATORS)},
                    float(np.mean([r["a_n_sq"] for r in ok])))


def run_replications(cfg: McConfig, workers=1) -> McReport:
    """Simulate ``cfg.reps`` samples and tabulate BIAS/SD/ASE/RMSE at the
    evaluation points and DR band coverage (CP, Mcri, Sdcri, GCP) on the
    coverage grid."""
    results = _collect(cfg, workers)
    report = summarize(cfg, results)
    if report.n_failures:
        logger.warning("%d replications failed: %s", report.n_failures, report.failure_codes)
    return report
