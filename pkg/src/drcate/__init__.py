"""Doubly robust estimation of conditional average treatment effects with
local linear smoothing and analytic uniform confidence bands."""

__version__ = "0.1.0"

from .bands import (
    BandResult,
    BandSpec,
    a_n_squared,
    assemble_band,
    compute_a_n,
    constancy_test,
    critical_gumbel,
    critical_one_sided,
    critical_pointwise,
    critical_two_sided,
    leading_term,
)
from .bandwidth import PluginState, direct_plugin, select_bandwidth, undersmoothed
from .data import Dataset, DesignSpec, build_design, load_csv
from .estimator import DoublyRobustCATE
from .exceptions import (
    BandwidthError,
    ConvergenceError,
    DegenerateNeighborhoodError,
    DRCateError,
    InputError,
    LevelUnattainableError,
    RankDeficiencyError,
    SeparationError,
    SimulationAbortedError,
)
from .first_stage import FirstStageFit, LogitIRLS, fit_first_stage, predict_mu, predict_pi
from .kernels import KERNELS, KernelSpec, get_kernel
from .local_linear import LocalLinearRegression, SmootherConfig, local_linear, smooth_with_se
from .monte_carlo import McConfig, McReport, generate_dgp, run_replications, scenario_specs
from .pseudo_outcome import PseudoOutcome, PseudoOutcomeTransformer, compute_psi, estimate_ate

__all__ = [name for name in dir() if not name.startswith("_")]
