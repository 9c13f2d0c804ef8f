import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedslice.model import (CellConfig, ChannelStats, ProblemInstance, ServiceClass,
                            scale_problem)
from fedslice.oracle import centralized_solve
from fedslice.scenario import ScenarioSpec, generate_scenario, random_instance

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_instance(rates, bits=(2400.0, 4000.0), slas=(0.5, 0.1), bandwidth=20e6, gains=None,
                  fog=None, confidence=0.9):
    """Instance from an S x N rate table with simple radio defaults."""
    rates = np.asarray(rates, dtype=float)
    S, N = rates.shape
    services = [ServiceClass(n, bits[n], slas[n]) for n in range(N)]
    gains = np.full((S, N), 1e-10) if gains is None else np.asarray(gains, dtype=float)
    cells = [CellConfig(s, bandwidth, 1e3,
                        [ChannelStats(float(rates[s, n]), float(gains[s, n]), 0.2, 2e-14)
                         for n in range(N)])
             for s in range(S)]
    fog = rates.sum() / 0.85 if fog is None else fog
    return ProblemInstance(services, cells, fog, confidence)


@pytest.fixture(scope="session")
def base_scenario():
    return generate_scenario(ScenarioSpec())


@pytest.fixture(scope="session")
def fixture_2x2():
    return random_instance(0, S=2, N=2)


@pytest.fixture(scope="session")
def fixture_2x2_solved(fixture_2x2):
    sp = scale_problem(fixture_2x2)
    return fixture_2x2, sp, centralized_solve(fixture_2x2, sp=sp)
