"""
Shared fixtures for the qswitch test suite
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.mdp.model import Mdp, random_mdp, solve_q_star
from src.switching.family import build_family


@pytest.fixture
def mdp_2x2():
    return random_mdp(2, 2, gamma=0.9, reward_scale=1.0, seed=7)


@pytest.fixture
def mdp_3x2():
    return random_mdp(3, 2, gamma=0.8, reward_scale=1.0, seed=11)


@pytest.fixture
def example_mdp():
    """Two states, one action, uniform next state"""
    return Mdp(P=np.full((2, 1, 2), 0.5), r=np.zeros((2, 1, 2)), gamma=0.9)


@pytest.fixture
def family_2x2(mdp_2x2):
    return build_family(mdp_2x2, np.full(4, 0.25), alpha=0.1)


@pytest.fixture
def q_star_2x2(mdp_2x2):
    return np.asarray(solve_q_star(mdp_2x2))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=1234))


@pytest.fixture(scope="session", autouse=True)
def log_dir(tmp_path_factory):
    """Keep log and check files out of the working tree"""
    path = tmp_path_factory.mktemp("logs")
    previous = os.environ.get("QSWITCH_LOG_DIR")
    os.environ["QSWITCH_LOG_DIR"] = str(path)
    yield path
    if previous is None:
        os.environ.pop("QSWITCH_LOG_DIR", None)
    else:
        os.environ["QSWITCH_LOG_DIR"] = previous
