"""Shared fixtures: bundled scenario paths and the full-pass session runs
that several acceptance checks read from."""

import dataclasses
import time
from pathlib import Path

import pytest

from qstt.pipeline import run_session
from qstt.scenario import load_scenario
from qstt.timebase import ClockModel

REPO_ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = REPO_ROOT / "scenarios"


@pytest.fixture(scope="session")
def clean_scenario():
    return load_scenario(SCENARIOS / "clean_pass.yaml")


@pytest.fixture(scope="session")
def clean_run(clean_scenario):
    """One full clean pass, shared by the acceptance checks. Returns
    (result, wall seconds) so the runtime budget can be asserted too."""
    t0 = time.perf_counter()
    result = run_session(clean_scenario)
    wall = time.perf_counter() - t0
    return result, wall


@pytest.fixture(scope="session")
def drift_free_run(clean_scenario):
    """The clean pass with the ground clock rate error removed, leaving
    pure measurement noise in the offset series."""
    scenario = dataclasses.replace(
        clean_scenario,
        clock_b=ClockModel(offset_tau=clean_scenario.clock_b.offset_tau,
                           rate_kappa=1.0),
    )
    return run_session(scenario)


@pytest.fixture()
def short_scenario(clean_scenario):
    """Clean-pass configuration cut to a few seconds for cheap pipeline
    tests; callers override fields with dataclasses.replace."""
    return dataclasses.replace(clean_scenario, duration=4.0, seed=20240)
