"""Experiment orchestration shared by the command-line surface and the tests.

Seed discipline: every random draw is derived from a named base seed in the
configuration through a stable hash, so one integer reproduces a whole
experiment and independent draws never alias.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .config import ExperimentConfig
from .errors import SeparationError
from .estimator import (
    EstimateResult,
    EstimationOptions,
    EstimationProblem,
    estimate,
)
from .evaluation import EvalReport, fit, monte_carlo, validation_simulate
from .likelihood import (
    ObservationSelector,
    ParameterVectorA,
    estimation_data_from_signals,
    selector_from_names,
)
from .network import EquivalentSubnetwork, build_equivalent_subnetwork, check_separation
from .simulate import RngSpec, SignalSet, draw_inputs, draw_noise, simulate_recursive


def derive_seed(base: int, label: str) -> int:
    """Stable 63-bit sub-seed for a named draw."""
    digest = hashlib.sha256(f"{base}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def input_spec(config: ExperimentConfig, seed: int) -> RngSpec:
    law = config.input_law.get("kind", "rademacher")
    return RngSpec(
        seed=seed,
        input_law=law,
        sigma=float(config.input_law.get("sigma", 1.0)),
        path=config.input_law.get("path"),
    )


def generate_signals(config: ExperimentConfig, base_seed: int,
                     noise_seed: int | None = None) -> tuple[SignalSet, dict]:
    """Simulate the configured network; returns the signals and the seed record."""
    seeds = {
        "base": base_seed,
        "inputs": derive_seed(base_seed, "inputs"),
        "noise": noise_seed if noise_seed is not None else derive_seed(base_seed, "noise"),
    }
    r = draw_inputs(config.network.topology.q, config.samples,
                    input_spec(config, seeds["inputs"]))
    e = draw_noise(config.network, config.samples, seeds["noise"])
    signals = simulate_recursive(config.network, r, e)
    return signals, seeds


def build_equivalent(config: ExperimentConfig) -> EquivalentSubnetwork:
    violations = check_separation(config.network.topology, config.partition)
    if violations:
        raise SeparationError(f"partition not separable, offending edges {violations}")
    return build_equivalent_subnetwork(config.network.topology, config.partition)


def build_selector(config: ExperimentConfig, observed=None) -> ObservationSelector:
    names = tuple(observed) if observed is not None else config.observed
    return selector_from_names(names, config.partition.set_a)


def estimation_options(config: ExperimentConfig) -> EstimationOptions:
    est = config.estimation
    return EstimationOptions(
        gtol=float(est.get("gtol", 1e-6)),
        xtol=float(est.get("xtol", 1e-10)),
        max_iter=int(est.get("max_iter", 500)),
        lambda_floor=float(est.get("lambda_floor", 1e-10)),
        lambda_modes=config.lambda_modes,
    )


def build_problem(config: ExperimentConfig, signals: SignalSet,
                  observed=None) -> EstimationProblem:
    eq = build_equivalent(config)
    selector = build_selector(config, observed)
    data = estimation_data_from_signals(signals, eq, selector)
    return EstimationProblem(
        eq=eq,
        selector=selector,
        data=data,
        orders=config.orders,
        options=estimation_options(config),
    )


def run_estimate(config: ExperimentConfig, signals: SignalSet,
                 observed=None) -> EstimateResult:
    return estimate(build_problem(config, signals, observed))


def truth_parameters(config: ExperimentConfig) -> ParameterVectorA:
    systems = [config.network.systems[i - 1] for i in config.partition.set_a]
    return ParameterVectorA.from_systems(systems)


def validation_fits(config: ExperimentConfig, theta_hat: ParameterVectorA,
                    validation_signals: SignalSet | None = None) -> dict[str, float]:
    """100 x fit of each target output on validation data (noise-free prediction)."""
    if validation_signals is None:
        base = config.seeds.get("validation", derive_seed(config.seeds["estimation"], "val"))
        validation_signals, _ = generate_signals(config, base)
    eq = build_equivalent(config)
    rt_rows = [
        validation_signals.r[idx - 1] if kind == "r" else validation_signals.y[idx - 1]
        for kind, idx in eq.r_channels
    ]
    r_tilde = np.vstack(rt_rows) if rt_rows else np.zeros((0, validation_signals.n))
    predicted = validation_simulate(theta_hat, eq, r_tilde)
    out = {}
    for pos, sys_id in enumerate(config.partition.set_a):
        reference = validation_signals.y[sys_id - 1]
        out[f"y{sys_id}"] = 100.0 * fit(predicted[pos], reference)
    return out


def monte_carlo_study(config: ExperimentConfig, runs: int | None = None,
                      jobs: int = 1, observed=None) -> EvalReport:
    """Noise-redraw Monte Carlo: inputs fixed, disturbances redrawn per run."""
    mc_conf = config.monte_carlo
    runs = int(runs if runs is not None else mc_conf.get("runs", 100))
    base = int(config.seeds.get("monte_carlo_base",
                                derive_seed(config.seeds["estimation"], "mc")))
    seeds = [derive_seed(base, f"noise-{k}") for k in range(runs)]
    make = _MonteCarloProblemFactory(config, observed)
    return monte_carlo(make, truth_parameters(config), runs, seeds=seeds, jobs=jobs)


class _MonteCarloProblemFactory:
    """Picklable per-run problem builder (inputs fixed, noise per seed)."""

    def __init__(self, config: ExperimentConfig, observed=None):
        self.config = config
        self.observed = observed

    def __call__(self, noise_seed: int) -> EstimationProblem:
        config = self.config
        signals, _ = generate_signals(config, config.seeds["estimation"],
                                      noise_seed=noise_seed)
        return build_problem(config, signals, self.observed)
