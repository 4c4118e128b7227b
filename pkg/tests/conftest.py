import numpy as np
import pytest

from snlgame.network import NetworkInstance, generate_instance


def line_instance(points, edges_ss, anchors=(), edges_as=(), box=(-3.0, 3.0), dim=1):
    """Hand-built instance with explicit measurements (no truth)."""
    points = np.asarray(points, dtype=float).reshape(-1, dim)
    boxes = np.tile(np.array([box] * dim, dtype=float), (len(points), 1, 1))
    return NetworkInstance(
        dim=dim,
        anchors=np.asarray(anchors, dtype=float).reshape(-1, dim),
        edges_ss=list(edges_ss),
        edges_as=list(edges_as),
        sensing_radius=10.0,
        boxes=boxes,
    )


@pytest.fixture(scope="session")
def fig4():
    return generate_instance(7, num_sensors=7, num_anchors=3, box=(0, 1), sensing_radius=0.75)


@pytest.fixture(scope="session")
def dense():
    return generate_instance(3, num_sensors=6, num_anchors=3, box=(-1, 1), sensing_radius=1.8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
