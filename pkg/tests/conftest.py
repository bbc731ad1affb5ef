import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Desk-scale Monte Carlo settings shared by the table checks.
DESK_SEED = 20260601
DESK_REPS = 500
_reports = {}


def desk_report(scenario):
    """Cached 500-replication run (p=10, n=500) for one scenario."""
    from drcate.monte_carlo import McConfig, run_replications

    if scenario not in _reports:
        cfg = McConfig(p=10, n=500, reps=DESK_REPS, seed=DESK_SEED, scenario=scenario)
        _reports[scenario] = run_replications(cfg, workers=min(4, os.cpu_count() or 1))
    return _reports[scenario]
