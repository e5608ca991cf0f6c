import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gprodom import so3
from gprodom.dataio import corridor_scene, simulate
from gprodom.fusion import RobotState

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corridor_streams():
    """Noiseless 30 m corridor, shared across tests (simulation is deterministic)."""
    return simulate(corridor_scene(), seed=0)


def random_state(rng, t=0.0, bias_scale=0.1):
    R = so3.exp(rng.normal(size=3))
    return RobotState(
        rng.normal(size=3) * 2.0,
        rng.normal(size=3),
        R,
        rng.normal(size=3) * bias_scale,
        rng.normal(size=3) * bias_scale * 0.1,
        timestamp_s=t,
    )
