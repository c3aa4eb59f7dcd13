import numpy as np
import pytest
import structlog

from popkit.apuf import ApufInstance, StageModel, TmvConfig, new_instance
from popkit.engine import engine
from popkit.pop import PopConfig, build_pop


@pytest.fixture(autouse=True)
def single_thread():
    engine.configure(1)
    yield
    engine.configure(1)


@pytest.fixture(autouse=True)
def reset_logging():
    # main() binds structlog to the sys.stderr of the moment; don't leak a closed capture stream
    yield
    structlog.reset_defaults()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def apuf64() -> ApufInstance:
    return new_instance(64, instance_seed=11, model=StageModel.DELAY)


@pytest.fixture
def hand_apuf() -> ApufInstance:
    """n = 2; responses to 00, 01, 10, 11 are 1, 0, 1, 0."""
    return ApufInstance.from_weights([1.0, -2.0, 0.5])


@pytest.fixture
def small_pop():
    return build_pop(PopConfig(width=8, first_layer_stages=2, rounds=1, tmv=TmvConfig(1),
                               master_seed=3))
