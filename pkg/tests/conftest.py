import numpy as np
import pytest

from evflow.core import EventStream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stream(rng, n=1000, width=32, height=24, t_start=0, t_end=100_000) -> EventStream:
    """Canonically ordered random stream for round-trip and slicing tests."""
    t = np.sort(rng.integers(t_start, t_end + 1, size=n))
    x = rng.integers(0, width, size=n)
    y = rng.integers(0, height, size=n)
    p = rng.choice([-1, 1], size=n)
    order = np.lexsort((p, x, y, t))
    return EventStream(t[order], x[order], y[order], p[order], width, height, t_start, t_end)
