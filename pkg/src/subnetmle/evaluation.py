"""Fit metric, validation simulation, Monte Carlo study and transfer-function utilities."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PoleError, UndefinedFitError
from .likelihood import ParameterVectorA
from .network import ArmaxParams, EquivalentSubnetwork
from .simulate import simulate_equivalent
from .validation import as_vector


@dataclass(frozen=True)
class RationalTF:
    """Rational transfer function, coefficient vectors in descending powers of z."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        den = np.trim_zeros(den, "f")
        if den.size == 0:
            raise ValueError("denominator must be nonzero")
        if abs(den[0] - 1.0) > 1e-12:
            raise ValueError("denominator must be monic")
        num = np.trim_zeros(num, "f")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ValueError("transfer function must be proper (deg num <= deg den)")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)


@dataclass
class EvalReport:
    """Per-signal fit values and Monte Carlo moments over the (a, b) parameters."""

    fits: dict[str, float] = field(default_factory=dict)
    bias: np.ndarray | None = None
    bias_norm: float | None = None
    cov_trace: float | None = None
    cov_max_eig: float | None = None
    run_count: int = 0
    excluded_count: int = 0
    flagged: bool = False
    theta_runs: list[np.ndarray] = field(default_factory=list)


def fit(x_hat, x_ref) -> float:
    """1 - ||x_hat - x_ref|| / ||x_ref - mean(x_ref)||."""
    x_hat = as_vector(x_hat, "x_hat")
    x_ref = as_vector(x_ref, "x_ref", length=x_hat.shape[0])
    centered = x_ref - x_ref.mean()
    denom = np.linalg.norm(centered)
    if denom == 0.0:
        raise UndefinedFitError("fit undefined for a constant reference signal")
    return float(1.0 - np.linalg.norm(x_hat - x_ref) / denom)


def validation_simulate(theta_hat: ParameterVectorA, eq: EquivalentSubnetwork,
                        r_tilde, e_a: np.ndarray | None = None) -> np.ndarray:
    """Predicted target outputs on validation data.

    Drives the equivalent sub-network with the estimated parameters, the
    validation exogenous inputs and the separator outputs taken from the
    true-model validation run.  By default the prediction is noise free
    (e_a = 0), matching the reported fit convention.
    """
    na = theta_hat.n_systems
    rt = np.asarray(r_tilde, dtype=float) if not isinstance(r_tilde, dict) else r_tilde
    n = (next(iter(rt.values())).shape[-1] if isinstance(rt, dict) else rt.shape[1])
    if e_a is None:
        e_a = np.zeros((na, n))
    y, _ = simulate_equivalent(theta_hat.to_armax(1.0), eq, rt, e_a)
    return y


def tf_from_armax(params: ArmaxParams) -> tuple[RationalTF, RationalTF]:
    """(G, H) = (B/A, C/A) in the z domain with monic denominators."""
    n_a, n_b, n_c = params.orders
    deg = max(n_a, n_b, n_c)
    den = np.zeros(deg + 1)
    den[0] = 1.0
    den[1 : 1 + n_a] = params.a
    if n_b:
        # b_j multiplies u_{k-j}, i.e. sits at z^{deg - j} after clearing delays
        num_g = np.zeros(deg)
        num_g[:n_b] = params.b
    else:
        num_g = np.zeros(1)
    num_h = np.zeros(deg + 1)
    num_h[0] = 1.0
    num_h[1 : 1 + n_c] = params.c
    return RationalTF(num=num_g, den=den), RationalTF(num=num_h, den=den)


def tf_eval(tf: RationalTF, z: complex) -> complex:
    """num(z) / den(z); raises when z is numerically at a pole."""
    den = np.polyval(tf.den, z)
    if abs(den) < 1e-10:
        raise PoleError(f"evaluation at z={z} is within 1e-10 of a pole")
    return complex(np.polyval(tf.num, z) / den)


def _tf_series(g1: RationalTF, g2: RationalTF, g3: RationalTF, z: complex):
    return tf_eval(g1, z), tf_eval(g2, z), tf_eval(g3, z)


def closed_loop_identity_check(g1: RationalTF, g2: RationalTF, g3: RationalTF,
                               grid=None) -> tuple[float, int]:
    """Max deviation of the open-loop recovery identities on a unit-circle grid.

    The closed-loop row from the known inputs to the chained output determines
    the three open-loop functions uniquely; this checks the recovery formulas
    pointwise and returns (max deviation, skipped grid points).
    """
    if grid is None:
        grid = np.exp(1j * np.pi * (np.arange(128) + 0.5) / 128)
    max_dev = 0.0
    skipped = 0
    for z in np.atleast_1d(grid):
        try:
            v1, v2, v3 = _tf_series(g1, g2, g3, z)
        except PoleError:
            skipped += 1
            continue
        delta = 1.0 - v3 * v2
        gc1 = v3 * v2 * v1
        gc2 = v3 * v2
        gc3 = v3
        if min(abs(delta), abs(gc2), abs(gc3), abs(delta + gc2)) < 1e-10:
            skipped += 1
            continue
        gc1, gc2, gc3 = gc1 / delta, gc2 / delta, gc3 / delta
        dev = max(
            abs(gc1 / gc2 - v1),
            abs(gc2 / gc3 - v2),
            abs(gc3 / (1.0 + gc2) - v3),
        )
        max_dev = max(max_dev, float(dev))
    return max_dev, skipped


def _default_estimate(problem):
    from .estimator import estimate

    return estimate(problem, with_assumptions=False)


def _mc_single(args):
    make_problem, estimate_fn, seed = args
    problem = make_problem(seed)
    result = estimate_fn(problem)
    theta_ab = np.concatenate(
        [np.concatenate(result.theta_hat.a), np.concatenate(result.theta_hat.b)]
    )
    return seed, bool(result.converged), theta_ab


def monte_carlo(make_problem, truth: ParameterVectorA, runs: int, seeds=None,
                estimate_fn=None, jobs: int = 1) -> EvalReport:
    """Bias and covariance of the (a, b) estimates over noise redraws.

    ``make_problem(seed)`` must build the estimation problem for one noise
    realization (the exogenous inputs stay fixed across runs).  Non-converged
    runs are excluded and counted; the report is flagged when more than 20%
    drop out.  Moments are accumulated in a deterministic order.
    """
    if runs < 2:
        raise ValueError("at least two runs are required for covariance estimates")
    if seeds is None:
        seeds = list(range(runs))
    seeds = list(seeds)[:runs]
    if len(seeds) != runs:
        raise ValueError("need one seed per run")
    if len(set(seeds)) != len(seeds):
        raise ValueError("run seeds must be unique")
    estimate_fn = estimate_fn or _default_estimate
    tasks = [(make_problem, estimate_fn, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_mc_single, tasks))
    else:
        raw = [_mc_single(t) for t in tasks]
    order = {seed: pos for pos, seed in enumerate(seeds)}
    raw.sort(key=lambda item: order[item[0]])

    truth_ab = np.concatenate([np.concatenate(truth.a), np.concatenate(truth.b)])
    kept = [theta for _, ok, theta in raw if ok]
    excluded = runs - len(kept)
    report = EvalReport(run_count=len(kept), excluded_count=excluded,
                        flagged=excluded > 0.2 * runs,
                        theta_runs=[theta for _, _, theta in raw])
    if len(kept) >= 2:
        thetas = np.vstack(kept)
        mean = thetas.mean(axis=0)
        report.bias = mean - truth_ab
        report.bias_norm = float(np.linalg.norm(report.bias))
        centered = thetas - mean
        cov = centered.T @ centered / (thetas.shape[0] - 1)
        report.cov_trace = float(np.trace(cov))
        report.cov_max_eig = float(np.linalg.eigvalsh(cov).max())
    return report
