"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI prints
before the human message.
"""


class DRCateError(ValueError):
    code = "ERROR"


class InputError(DRCateError):
    """Malformed or inconsistent input data or configuration."""

    code = "INPUT_ERROR"


class RankDeficiencyError(DRCateError):
    code = "RANK_DEFICIENT"


class ConvergenceError(DRCateError):
    code = "NO_CONVERGENCE"


class SeparationError(ConvergenceError):
    """Logistic coefficients diverge, i.e. the treatment is (quasi-)separable."""

    code = "SEPARATION"


class DegenerateNeighborhoodError(DRCateError):
    """Too little kernel mass, or a singular local system, at an evaluation point."""

    code = "DEGENERATE_NEIGHBORHOOD"

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class BandwidthError(DRCateError):
    code = "BANDWIDTH_ERROR"


class LevelUnattainableError(DRCateError):
    """The requested confidence level has no positive critical value at this a_n."""

    code = "LEVEL_UNATTAINABLE"


class SimulationAbortedError(DRCateError):
    """Too many Monte Carlo replications failed."""

    code = "MC_ABORTED"
