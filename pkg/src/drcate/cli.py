"""Command-line interface: ``drcate estimate`` and ``drcate mc``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import secrets
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .bands import FLAVORS
from .data import DesignSpec, load_csv
from .estimator import DoublyRobustCATE
from .exceptions import DRCateError, InputError
from .kernels import KERNELS
from .monte_carlo import SCENARIOS, McConfig, run_replications
from .pseudo_outcome import ESTIMATORS

logger = logging.getLogger("drcate")

EXIT_INPUT = 2
EXIT_FAILURE = 1
FLOAT_FORMAT = "%.10g"


def _names(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _pairs(text):
    out = []
    for item in _names(text):
        parts = [p.strip() for p in item.split(":")]
        if len(parts) != 2 or not all(parts):
            raise InputError(f"interaction {item!r} must look like name1:name2")
        out.append(tuple(parts))
    return out


def _parse_interval(text, dim):
    """``"a,b"`` for one coordinate, ``"a,b;c,d"`` for two, and so on."""
    try:
        rows = [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    except ValueError:
        raise InputError(f"cannot parse interval {text!r}") from None
    if any(len(r) != 2 for r in rows) or len(rows) not in (1, dim):
        raise InputError(f"interval {text!r} needs one 'lower,upper' pair per coordinate")
    return np.array(rows * dim if len(rows) == 1 else rows)


def _design(names, squares, interactions):
    index = {name: i for i, name in enumerate(names)}

    def lookup(name):
        if name not in index:
            raise InputError(f"unknown covariate {name!r} in design terms")
        return index[name]

    return DesignSpec(
        base_cols=tuple(range(len(names))),
        squares=tuple(lookup(s) for s in _names(squares)),
        interactions=tuple((lookup(a), lookup(b)) for a, b in _pairs(interactions)),
    )


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _atomic_write_all(outputs):
    """Write every ``(path, text)`` to a temp file first, then rename all of them."""
    staged = []
    try:
        for path, text in outputs:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _json_text(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _resolve_seed(seed):
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def versions():
    import scipy
    import sklearn

    return {
        "drcate": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "pandas": pd.__version__,
    }


def run_estimate(args) -> int:
    seed = _resolve_seed(args.seed)
    covariates = _names(args.covariates)
    if not covariates:
        raise InputError("--covariates must name at least one column")
    x_names = _names(args.x_cols) or covariates[:1]
    data = load_csv(args.data, args.outcome, args.treatment, covariates, x_names)
    reg = _design(covariates, args.reg_squares, args.reg_interactions)
    ps = _design(covariates, args.ps_squares, args.ps_interactions)
    model = DoublyRobustCATE(
        x_cols=data.x_cols,
        reg_spec=reg,
        ps_spec=ps,
        estimator=args.estimator,
        kernel=args.kernel,
        bandwidth="plugin" if args.bandwidth is None else args.bandwidth,
        undersmooth=not args.no_undersmooth,
        trim_eps=args.trim_eps,
    ).fit_dataset(data)
    logger.info("bandwidth %.6g (%s)", model.bandwidth_,
                "plug-in" if model.plugin_ is not None else "override")
    logger.info("propensity scores clipped: %d", model.psi_.clip_count)

    interval = (model.default_interval() if args.interval is None
                else _parse_interval(args.interval, data.dim_x))
    side = "two_sided" if args.one_sided is None else f"one_sided_{args.one_sided}"
    primary = "uniform" if args.band == "all" else args.band
    band = model.confidence_band(interval, args.alpha, primary, side, args.grid_points)
    flavors = FLAVORS if args.band == "all" else (args.band,)
    logger.info("a_n^2 %.6g; critical values %s", band.a_n_sq,
                {k: round(v, 6) for k, v in band.criticals.items()})

    columns = {}
    names = data.names or tuple(f"z{i}" for i in range(data.p))
    x_labels = ["x"] if data.dim_x == 1 else [f"x{j + 1}" for j in range(data.dim_x)]
    for j, label in enumerate(x_labels):
        columns[label] = band.grid[:, j]
    columns["g_hat"] = band.g_hat
    columns["se"] = band.se
    for flavor in flavors:
        lo, hi = band.bounds(flavor)
        columns[f"lo_{flavor}"] = lo
        columns[f"hi_{flavor}"] = hi
    band_csv = pd.DataFrame(columns).to_csv(index=False, float_format=FLOAT_FORMAT)

    verdict = {"reject": None, "g_I": None}
    if math.isfinite(band.criticals.get("uniform", float("nan"))):
        uniform = band if primary == "uniform" else model.confidence_band(
            interval, args.alpha, "uniform", side, args.grid_points)
        verdict = model.test_constancy(uniform, interval)
    plugin = model.plugin_
    summary = {
        "n": data.n,
        "x_columns": [names[c] for c in data.x_cols],
        "estimator": args.estimator,
        "kernel": args.kernel,
        "bandwidth": model.bandwidth_,
        "bandwidth_source": "override" if plugin is None else "plugin",
        "undersmooth": not args.no_undersmooth,
        "plugin": None if plugin is None else {
            "h_dpi": plugin.h_dpi, "n_blocks": plugin.n_blocks, "theta22": plugin.theta22,
            "theta24": plugin.theta24_q, "sigma2": plugin.sigma2, "g1": plugin.g1, "g2": plugin.g2,
        },
        "interval": interval,
        "alpha": args.alpha,
        "side": side,
        "a_n": band.a_n,
        "a_n_squared": band.a_n_sq,
        "critical_values": band.criticals,
        "ate": model.ate_,
        "g_I": verdict["g_I"],
        "constancy_rejected": verdict["reject"],
        "propensity_clipped": model.psi_.clip_count,
        "trim_eps": args.trim_eps,
        "dim_theta": model.dim_theta_,
        "grid_points": int(band.grid.shape[0]),
        "seed": seed,
        "versions": versions(),
    }
    _atomic_write_all([(args.out_band, band_csv), (args.out_summary, _json_text(summary))])
    return 0


def run_mc(args) -> int:
    seed = _resolve_seed(args.seed)
    scenarios = SCENARIOS if args.scenario == "all" else (args.scenario,)
    configs = [McConfig(p=args.p, n=args.n, reps=args.reps, seed=seed, scenario=s)
               for s in scenarios]
    out = Path(args.out)
    outputs = []
    meta = {"seed": seed, "versions": versions(), "scenarios": {}}
    for cfg in configs:
        report = run_replications(cfg, workers=args.workers)
        logger.info("scenario %s: %d ok, %d failed", cfg.scenario, report.n_success,
                    report.n_failures)
        outputs.append((out / f"estimates_{cfg.scenario}.csv",
                        report.estimates.to_csv(index=False, float_format=FLOAT_FORMAT)))
        outputs.append((out / f"coverage_{cfg.scenario}.csv",
                        report.coverage.to_csv(index=False, float_format=FLOAT_FORMAT)))
        meta["scenarios"][cfg.scenario] = report.metadata()
    outputs.append((out / "metadata.json", _json_text(meta)))
    _atomic_write_all(outputs)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="drcate", description=(
        "Doubly robust conditional average treatment effects with uniform confidence bands."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the CATE and its bands from a CSV file")
    est.add_argument("--data", required=True, help="CSV file with a header row")
    est.add_argument("--outcome", required=True)
    est.add_argument("--treatment", required=True)
    est.add_argument("--covariates", required=True, help="comma-separated covariate columns")
    est.add_argument("--x-cols", default="", help="covariates the CATE conditions on (default: first)")
    est.add_argument("--reg-squares", default="")
    est.add_argument("--reg-interactions", default="", help="e.g. age:educ,age:married")
    est.add_argument("--ps-squares", default="")
    est.add_argument("--ps-interactions", default="")
    est.add_argument("--estimator", choices=ESTIMATORS, default="dr")
    est.add_argument("--kernel", choices=KERNELS, default="gaussian")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--band", choices=(*FLAVORS, "all"), default="all")
    est.add_argument("--one-sided", choices=("lower", "upper"), default=None)
    est.add_argument("--interval", default=None,
                     help="'a,b' per coordinate, ';'-separated (default: 5%%-95%% quantiles)")
    est.add_argument("--grid-points", type=int, default=None)
    est.add_argument("--bandwidth", type=float, default=None, help="fixed bandwidth (skips plug-in)")
    est.add_argument("--no-undersmooth", action="store_true")
    est.add_argument("--trim-eps", type=float, default=0.01)
    est.add_argument("--out-band", default="band.csv")
    est.add_argument("--out-summary", default="summary.json")
    est.add_argument("--seed", type=int, default=None)
    est.set_defaults(func=run_estimate)

    mc = sub.add_parser("mc", help="run the Monte Carlo study")
    mc.add_argument("--p", type=int, default=10)
    mc.add_argument("--n", type=int, default=500)
    mc.add_argument("--reps", type=int, default=500)
    mc.add_argument("--seed", type=int, default=None)
    mc.add_argument("--scenario", choices=(*SCENARIOS, "all"), default="all")
    mc.add_argument("--out", required=True, help="output directory")
    mc.add_argument("--workers", type=int, default=1)
    mc.set_defaults(func=run_mc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except DRCateError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc, InputError) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
