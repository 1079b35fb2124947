"""Session fixtures for the desk-scale convergence studies.

The three studies below are the expensive part of the suite; each runs
once per session and is shared between the acceptance module and the
property tests that consume the same tables.
"""

import math
import time

import pytest

import sddeint as sd

DESK_SEED = 20260808
DESK_H_LIST = tuple(2.0**-k for k in range(2, 8))
DESK_H_REFINED = 2.0**-10
DESK_TRIALS = 200

ALL_SCHEMES = ("em", "mem", "milstein-simple", "milstein-refined", "mm-simple", "mm-refined")


def study_config(delays, schemes, mode, seed=DESK_SEED, n_trials=DESK_TRIALS,
                 h_list=DESK_H_LIST, h_refined=DESK_H_REFINED, terminal_time=4.0):
    kinds = tuple(sd.SchemeKind.parse(s, mode) for s in schemes)
    return sd.ExperimentConfig(
        problem="example1",
        delays=delays,
        terminal_time=terminal_time,
        h_initial_list=h_list,
        h_refined_initial=h_refined,
        schemes=kinds,
        n_trials=n_trials,
        master_seed=seed,
    )


def _timed_study(cfg):
    start = time.time()
    table = sd.run_study(cfg, workers=2)
    table.elapsed = time.time() - start
    return cfg, table


@pytest.fixture(scope="session")
def divisible_study():
    """Desk-scale divisible study: example1, delays (1, 1/2), all six schemes."""
    return _timed_study(study_config((1.0, 0.5), ALL_SCHEMES, "mesh_exact"))


@pytest.fixture(scope="session")
def li_study():
    """Desk-scale fixed-step interpolation study with indivisible delays (1, pi/4)."""
    return _timed_study(study_config((1.0, math.pi / 4), ALL_SCHEMES, "linear_interpolation"))


@pytest.fixture(scope="session")
def augmented_study():
    """Desk-scale augmented-mesh study with indivisible delays (1, pi/4)."""
    return _timed_study(study_config((1.0, math.pi / 4), ("em", "milstein-refined"), "mesh_exact"))
