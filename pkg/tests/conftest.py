import math

import numpy as np
import pytest

from bellstat import ChshConfig, Scenario, SettingDistribution, chsh_functional, quantum_distribution
from bellstat.lr import strategy_matrix


@pytest.fixture(scope="session")
def chsh_scenario():
    return Scenario.chsh()


@pytest.fixture(scope="session")
def uniform_settings(chsh_scenario):
    return SettingDistribution.uniform(chsh_scenario)


@pytest.fixture(scope="session")
def chsh(uniform_settings):
    return chsh_functional(uniform_settings)


@pytest.fixture(scope="session")
def ideal_q():
    """Balanced Bell state, perfect detectors, textbook optimal angles."""
    return quantum_distribution(ChshConfig(math.pi / 4))


@pytest.fixture(scope="session")
def strategies(chsh_scenario, uniform_settings):
    return strategy_matrix(chsh_scenario, uniform_settings)


def random_conditional_q(rng, scenario, settings, alpha=1.0):
    """Setting marginals exact, outcomes drawn per pair (signaling in general)."""
    k = scenario.alice_outcomes * scenario.bob_outcomes
    cond = rng.dirichlet(np.full(k, alpha), size=scenario.alice_settings * scenario.bob_settings)
    from bellstat import JointDistribution

    return JointDistribution(scenario, settings, (cond * settings.probs.reshape(-1, 1)).reshape(scenario.shape))


def random_lr_q(rng, scenario, settings, alpha=1.0):
    from bellstat import JointDistribution

    m = strategy_matrix(scenario, settings)
    w = rng.dirichlet(np.full(m.shape[0], alpha))
    return JointDistribution(scenario, settings, (w @ m).reshape(scenario.shape))
