from pathlib import Path

import numpy as np
import pytest

from singular_flow.autonomize import autonomize
from singular_flow.engine import run_constraint_algorithm
from singular_flow.system import load_system

SPECS = Path(__file__).resolve().parent.parent / "specs"
PENDULUM_SEED = np.array([0.0, 1.0, 0.0, 0.1, 0.0, 0.0])


@pytest.fixture(scope="session")
def specs_dir() -> Path:
    return SPECS


@pytest.fixture(scope="session")
def pendulum_system():
    return autonomize(load_system(SPECS / "pendulum.json"))


@pytest.fixture(scope="session")
def pendulum_result(pendulum_system):
    return run_constraint_algorithm(pendulum_system, [PENDULUM_SEED])
