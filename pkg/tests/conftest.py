"""Shared fixtures.  The benchmark plant and the long synthesis runs are
computed once per session and reused by the unit and acceptance tests."""
import numpy as np
import pytest

from ksdsynth.augplant import assemble_plant
from ksdsynth.fixtures import paper_system
from ksdsynth.synth import IterationConfig, algorithm1, solve_theorem2


@pytest.fixture(scope="session")
def s4():
    return paper_system()


@pytest.fixture(scope="session")
def s4_plant(s4):
    return assemble_plant(s4)


@pytest.fixture(scope="session")
def s4_lambda2():
    return paper_system(1, 2)


@pytest.fixture(scope="session")
def s4_lambda2_plant(s4_lambda2):
    return assemble_plant(s4_lambda2)


@pytest.fixture(scope="session")
def theorem2_result(s4, s4_plant):
    return solve_theorem2(s4_plant, s4.supply)


@pytest.fixture(scope="session")
def alg1_lambda1(s4, s4_plant):
    return algorithm1(s4_plant, s4.supply, cfg=IterationConfig(max_iter=20))


@pytest.fixture(scope="session")
def alg1_lambda2(s4_lambda2, s4_lambda2_plant):
    return algorithm1(s4_lambda2_plant, s4_lambda2.supply, cfg=IterationConfig(max_iter=20))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sim_reference_gain(s4):
    """Benchmark closed loop with the reference gain: psi = [5, 3], disturbance on [0, 10)."""
    from ksdsynth.fixtures import PAPER_GAIN_TABLE2
    from ksdsynth.sim import SimConfig, parse_disturbance, simulate

    return simulate(s4, PAPER_GAIN_TABLE2, SimConfig(20.0, 0.002, [5.0, 3.0], parse_disturbance("builtin:paper")))


@pytest.fixture(scope="session")
def sim_zero_history(s4):
    from ksdsynth.fixtures import PAPER_GAIN_TABLE2
    from ksdsynth.sim import SimConfig, parse_disturbance, simulate

    return simulate(s4, PAPER_GAIN_TABLE2, SimConfig(20.0, 0.002, 0.0, parse_disturbance("builtin:paper")))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
