import numpy as np
import pytest

from tubempc.lti import LTISystem
from tubempc.mpc import Weights, precompute
from tubempc.polytope import Box, HPolytope

DRONE_A = np.array([
    [1.0, 0.19895, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.98952, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.19963, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.99627, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.16816],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.69946],
])

DRONE_B = np.array([
    [-0.10917348, 0.0, 0.0],
    [-1.08982035, 0.0, 0.0],
    [0.0, -0.141040918, 0.0],
    [0.0, -1.409531141, 0.0],
    [0.0, 0.0, -0.030967224],
    [0.0, 0.0, -0.292295416],
])

DRONE_REF = np.array([1.0, 0.0, 2.0, 0.0, 1.5, 0.0])
DRONE_X0 = np.array([-1.0, 0.0, 0.0, 0.0, 0.5, 0.0])


def drone_weights():
    return Weights(Q_x=5.0 * np.eye(6), Q_u=np.diag([30.0, 20.0, 1.0]),
                   Q_r=100.0 * np.eye(6), Q_sx=np.zeros((6, 6)), Q_su=np.eye(3))


def build_drone_artifacts(sys, beta):
    X = HPolytope([[0, 0, 1, 0, 0, 0], [0, 0, -1, 0, 0, 0]], [1.8, 1.8])
    U = HPolytope.from_box([-0.05, -0.05, -0.6], [0.05, 0.05, 0.6])
    W = Box(np.zeros(6), [0.0, beta, 0.0, beta, 0.0, beta])
    return precompute(sys, X, U, W, drone_weights(), N=10, eps=0.01,
                      arena_x=[10, 5, 10, 5, 10, 5], arena_theta=[10, 10, 10])


@pytest.fixture(scope="session")
def drone_system():
    return LTISystem(A=DRONE_A, B=DRONE_B, C=np.eye(6), D=np.zeros((6, 3)))


@pytest.fixture(scope="session")
def drone_artifact_cache(drone_system):
    cache = {}

    def get(beta):
        if beta not in cache:
            cache[beta] = build_drone_artifacts(drone_system, beta)
        return cache[beta]

    return get


@pytest.fixture(scope="session")
def drone_artifacts(drone_artifact_cache):
    """Default preset at the region-of-attraction disturbance level."""
    return drone_artifact_cache(0.02)
