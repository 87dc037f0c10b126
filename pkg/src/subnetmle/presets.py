"""Bundled demo network and configuration fixtures.

The seven-system demo network exercises every feature of the toolkit: a
three-system target chain with internal feedback, a two-system remainder
reachable only through the separator pair, one separator output feeding the
target and one target output feeding back into the separator (so the default
partition runs in approximate-ML mode).
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .network import ArmaxParams, NetworkModel, Partition, Topology

DEMO_PARTITION = Partition(set_a=(1, 2, 3), set_b=(4, 5), set_c=(6, 7))

_DEMO_SYSTEMS = (
    # (a, b, c, noise_var)
    ((1.0, 0.25), (0.3, 0.15), (0.3, -0.01), 0.01),
    ((-0.8, 0.15), (0.8, -0.3), (-0.8, 0.2), 0.02),
    ((0.45, -0.13), (-0.4, -0.25), (-0.02, -0.8), 0.03),
    ((-0.45, -0.1), (-2.0, 0.4), (-0.15, -0.07), 0.04),
    ((0.1, -0.4), (2.2, 2.0), (-0.6, -0.05), 0.05),
    ((-0.2, -0.15), (0.15, 0.05), (1.0, 0.15), 0.06),
    ((0.5, 0.05), (1.0, 0.2), (0.15, -0.7), 0.07),
)

_DEMO_UPSILON = np.array(
    [
        [0, 0, 0, 0, 0, 1, 0],
        [1, 0, 1, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 1],
        [0, 0, 0, 1, 0, 0, 0],
        [0, 0, 0, 0, 1, 0, 1],
        [0, 0, 1, 0, 0, 0, 0],
    ],
    dtype=float,
)

_DEMO_OMEGA = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 0],
        [0, 0, 0],
        [0, 0, 1],
        [0, 0, 0],
    ],
    dtype=float,
)


def demo_network(no_target_feedback: bool = False) -> NetworkModel:
    """Seven-system demo network.

    With ``no_target_feedback`` the target-to-separator edge (3 -> 7) is cut
    and system 7 receives its own exogenous drive instead, which turns the
    default partition into a true-ML configuration.
    """
    ups = _DEMO_UPSILON.copy()
    omega = _DEMO_OMEGA.copy()
    if no_target_feedback:
        ups[6, 2] = 0.0
        omega = np.hstack([omega, np.zeros((7, 1))])
        omega[6, 3] = 1.0
    topology = Topology(m=7, q=omega.shape[1], upsilon=ups, omega=omega)
    systems = tuple(
        ArmaxParams(a=np.array(a), b=np.array(b), c=np.array(c), noise_var=v)
        for a, b, c, v in _DEMO_SYSTEMS
    )
    return NetworkModel(topology=topology, systems=systems)


def demo_noise_vars() -> np.ndarray:
    return np.array([s[3] for s in _DEMO_SYSTEMS])


def example_config_path(name: str = "example_fig1") -> str:
    """Filesystem path of a bundled experiment configuration."""
    ref = resources.files("subnetmle") / "configs" / f"{name}.json"
    return str(ref)
