import numpy as np
import pytest

from subnetmle import DEMO_PARTITION, build_equivalent_subnetwork, demo_network
from subnetmle.likelihood import ParameterVectorA


@pytest.fixture(scope="session")
def demo_model():
    return demo_network()


@pytest.fixture(scope="session")
def demo_eq(demo_model):
    return build_equivalent_subnetwork(demo_model.topology, DEMO_PARTITION)


@pytest.fixture(scope="session")
def demo_theta(demo_model):
    return ParameterVectorA.from_systems([demo_model.systems[i] for i in (0, 1, 2)])


@pytest.fixture(scope="session")
def demo_lambdas():
    return np.array([0.01, 0.02, 0.03])
