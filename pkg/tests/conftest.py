import numpy as np
import pytest

from mnklab.game import GameSpec
from mnklab.oracle import solve
from mnklab.space import state_space


@pytest.fixture(scope="session")
def spec():
    return GameSpec(3, 3, 3)


@pytest.fixture(scope="session")
def table(spec):
    return solve(spec)


@pytest.fixture(scope="session")
def space(spec):
    return state_space(spec)


@pytest.fixture(scope="session")
def random_states(space):
    """1,000 reproducible non-terminal states."""
    rng = np.random.default_rng(1234)
    idx = rng.choice(space.cont_indices, size=1000, replace=True)
    return [space.state(int(i)) for i in idx]


SMALL = {
    "cnn": {"channels": [4], "epochs": 1, "batch": 128},
    "experiments": {
        "nfxp-recovery": {"replications": 2, "games": 300},
        "ccp-accuracy": {"tabular_games": 3000, "visit_levels": [10, 40, 160], "games": 400},
        "ccs-consistency": {"games": {"rl": 3000, "soft": 3000}, "min_samples": 200},
        "rl-ladder": {"eval_games": 200},
        "calibrate-eval": {"budget": 40, "games_per_eval": 20, "eval_games": 200},
        "misspec-bias": {"games": 400, "starts": 2},
    },
}


def small_config() -> dict:
    """The reference configuration shrunk so every experiment runs in seconds."""
    from mnklab import config

    return config.load(overrides=SMALL)


@pytest.fixture
def small_cfg():
    return small_config()
