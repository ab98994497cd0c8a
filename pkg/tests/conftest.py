import numpy as np
import pytest

from covsteer.controller import synthesize
from covsteer.montecarlo import simulate
from covsteer.system import SteeringProblem

from helpers import example1, example2

EX1_PROBLEM = SteeringProblem([50.0], [[6.0]], [60.0], [[2.0]])
EX2_PROBLEM = SteeringProblem([0.0, 0.0], np.diag([0.6, 0.6]), [0.0, 0.0], np.diag([0.2, 0.1]))
FULL_PATHS = 100_000
SEED = 0


@pytest.fixture(scope="session")
def ex1_setup():
    system = example1()
    schedule, trace = synthesize(system, EX1_PROBLEM)
    return system, schedule, EX1_PROBLEM


@pytest.fixture(scope="session")
def ex2_setup():
    system = example2()
    schedule, trace = synthesize(system, EX2_PROBLEM)
    return system, schedule, EX2_PROBLEM


@pytest.fixture(scope="session")
def ex1_ensemble(ex1_setup):
    system, schedule, problem = ex1_setup
    return simulate(system, schedule, problem, FULL_PATHS, 1e-3, SEED)


@pytest.fixture(scope="session")
def ex2_ensemble(ex2_setup):
    system, schedule, problem = ex2_setup
    return simulate(system, schedule, problem, FULL_PATHS, 1e-3, SEED)
