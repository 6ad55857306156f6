import numpy as np
import pytest

from evkit.stream import EventStream, SensorConfig


def random_stream(rng, n, sensor, t_max=1_000_000):
    """Sorted random stream used across test modules."""
    t = np.sort(rng.integers(0, t_max, size=n))
    return EventStream.from_arrays(
        rng.integers(0, sensor.width, size=n),
        rng.integers(0, sensor.height, size=n),
        t,
        rng.choice([-1, 1], size=n),
        sensor,
    )


@pytest.fixture
def small_sensor():
    return SensorConfig(width=64, height=48, frame_rate=20.0, compare_rate=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
