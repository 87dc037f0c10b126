"""Three-stage maximum-likelihood estimation pipeline and assumption report.

Stage 1 fits a moving-average-free (ARX) model with a shared noise variance:
closed-form least squares when every target output is observed, marginal-NLL
minimization from zero otherwise.  Stage 2 adds the moving-average
coefficients, still with a shared concentrated variance.  Stage 3 releases
the per-system variances (smoothly floored via lambda = floor + exp(x)).
Each stage warm-starts the next, so the traced NLL values are non-increasing
across stages by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import likelihood as lk
from .errors import DomainError, RankError
from .likelihood import (
    LAMBDA_FLOOR,
    EstimationData,
    ObservationSelector,
    ParameterVectorA,
)
from .network import EquivalentSubnetwork
from .optimize import InitError, MinimizeOptions, MinimizeResult, minimize
from .polyalg import lag_roots, spectral_radius


@dataclass(frozen=True)
class EstimationOptions:
    gtol: float = 1e-6
    xtol: float = 1e-10
    max_iter: int = 500
    lambda_floor: float = LAMBDA_FLOOR
    lambda_modes: tuple[str, str, str] = ("shared", "shared", "free")
    tol_stab: float = 1e-6
    tol_pz: float = 1e-4
    tol_c: float = 1e-4
    rank_tol: float = 1e-8
    frequency_grid: int = 64
    extra_starts: tuple = ()

    def minimize_options(self) -> MinimizeOptions:
        return MinimizeOptions(gtol=self.gtol, xtol=self.xtol, max_iter=self.max_iter)


@dataclass(frozen=True)
class EstimationProblem:
    eq: EquivalentSubnetwork
    selector: ObservationSelector
    data: EstimationData
    orders: tuple[tuple[int, int, int], ...]
    options: EstimationOptions = EstimationOptions()

    def __post_init__(self):
        orders = tuple(tuple(int(v) for v in o) for o in self.orders)
        object.__setattr__(self, "orders", orders)
        if len(orders) != self.eq.n_systems:
            raise ValueError("one (n_a, n_b, n_c) triple per target system required")
        if any(v < 0 for o in orders for v in o):
            raise ValueError("orders must be nonnegative")
        n_params = sum(sum(o) for o in orders)
        if self.data.n < max(n_params, 1):
            raise ValueError(
                f"sample count {self.data.n} smaller than parameter count {n_params}"
            )
        self.selector.validate(self.eq.n_systems)

    @property
    def fully_observed(self) -> bool:
        return self.selector.covers_all_outputs(self.eq.n_systems)


@dataclass
class StageTrace:
    stage: str
    nll: float
    iterations: int
    reason: str


@dataclass
class AssumptionReport:
    a0_stable: bool
    spectral_radius: float
    a1_no_cancellation: bool
    min_root_distance: float
    a3_c_roots_ok: bool
    min_c_root_gap: float
    a2_rank_ok: bool | None = None
    a2_rank: int | None = None
    a4_excitation: float | None = None
    a5_identifiability: str = ""

    def gates_pass(self) -> bool:
        """A0-A3 verdicts; A4/A5 are advisory only."""
        core = self.a0_stable and self.a1_no_cancellation and self.a3_c_roots_ok
        return core and (self.a2_rank_ok is not False)


@dataclass
class EstimateResult:
    theta_hat: ParameterVectorA
    lambda_hat: np.ndarray
    nll: float
    stage_trace: list[StageTrace]
    ml_mode: str
    converged: bool
    assumptions: AssumptionReport | None = None


# ---------------------------------------------------------------------------
# objective builders
# ---------------------------------------------------------------------------


def _masked_orders(orders, with_c: bool):
    return tuple((na, nb, nc if with_c else 0) for na, nb, nc in orders)


def _stage_mode(problem: EstimationProblem, stage_index: int) -> str:
    mode = problem.options.lambda_modes[stage_index]
    if mode not in ("shared", "free"):
        raise ValueError(f"unknown noise-variance mode {mode!r}")
    if mode == "free" and stage_index < 2 and not problem.fully_observed:
        raise ValueError(
            "per-system concentration in the early stages needs every target "
            "output observed; use the shared mode for partial observation"
        )
    return mode


def _concentrated_full(problem: EstimationProblem, orders, mode: str):
    """Objective over packed theta; noise variances concentrated in closed form."""
    floor = problem.options.lambda_floor
    na = problem.eq.n_systems
    n = problem.data.n

    def fun_grad(x):
        theta = ParameterVectorA.from_packed(x, orders)
        try:
            resid = lk.residuals_full(theta, problem.eq, problem.data)
        except FloatingPointError:
            return np.inf, np.zeros_like(x)
        if not np.isfinite(resid).all():
            return np.inf, np.zeros_like(x)
        if mode == "shared":
            lam_hat = max(float((resid * resid).sum()) / (na * n), floor)
        else:
            lam_hat = np.maximum((resid * resid).sum(axis=1) / n, floor)
        value, grad_theta, _ = lk.nll_full_grad(theta, lam_hat, problem.eq, problem.data)
        return value, grad_theta

    return fun_grad


def _shared_concentrated_marginal(problem: EstimationProblem, orders):
    floor = problem.options.lambda_floor
    n_obs = len(problem.selector.observed)
    n = problem.data.n

    def fun_grad(x):
        theta = ParameterVectorA.from_packed(x, orders)
        parts = _marginal_parts(theta, problem)
        if parts is None:
            return np.inf, np.zeros_like(x)
        _, quad = parts
        lam_hat = max(quad / (n_obs * n), floor)
        try:
            value, grad_theta, _ = lk.nll_marginal_grad(
                theta, lam_hat, problem.eq, problem.selector, problem.data
            )
        except (DomainError, RankError):
            return np.inf, np.zeros_like(x)
        return value, grad_theta

    return fun_grad


def _marginal_parts(theta: ParameterVectorA, problem: EstimationProblem):
    """(logdet, quadratic form) of the unit-variance marginal Gram system."""
    try:
        work = lk._MarginalWork(
            theta, np.ones(theta.n_systems), problem.eq, problem.selector, problem.data
        )
        if not np.isfinite(work.w).all():
            return None
        work.factorize()
    except (DomainError, RankError, np.linalg.LinAlgError):
        return None
    return work.logdet, work.quad


def _variance_objective(problem: EstimationProblem, orders, n_lam: int):
    """Objective over (theta, x) with lambda = floor + exp(x).

    ``n_lam`` is the number of variance coordinates: one per system, or a
    single shared coordinate broadcast to every system.
    """
    floor = problem.options.lambda_floor
    na = problem.eq.n_systems
    full = problem.fully_observed

    def fun_grad(z):
        theta = ParameterVectorA.from_packed(z[:-n_lam], orders)
        lam_x = floor + np.exp(z[-n_lam:])
        lam = np.broadcast_to(lam_x, (na,))
        try:
            if full:
                value, gt, gl = lk.nll_full_grad(theta, lam, problem.eq, problem.data)
            else:
                value, gt, gl = lk.nll_marginal_grad(
                    theta, lam, problem.eq, problem.selector, problem.data
                )
        except (DomainError, RankError):
            return np.inf, np.zeros_like(z)
        if not np.isfinite(value):
            return np.inf, np.zeros_like(z)
        # chain rule from log-lambda to the smoothly floored coordinate
        gx = gl * (1.0 - floor / lam)
        if n_lam == 1:
            gx = np.array([gx.sum()])
        return value, np.concatenate([gt, gx])

    return fun_grad


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage1_arx(problem: EstimationProblem) -> tuple[ParameterVectorA, float, StageTrace]:
    """ARX fit (no moving-average part) with a concentrated noise variance."""
    mode = _stage_mode(problem, 0)
    orders = _masked_orders(problem.orders, with_c=False)
    n = problem.data.n
    na = problem.eq.n_systems
    if problem.fully_observed:
        theta0 = ParameterVectorA.from_packed(
            np.zeros(sum(sum(o) for o in orders)), orders
        )
        y_a, u_a = lk._recover_io(theta0, problem.eq, problem.data)
        a_blocks, b_blocks, residuals = [], [], []
        for i, (n_a, n_b, _) in enumerate(orders):
            cols = []
            for lag in range(1, n_a + 1):
                col = np.zeros(n)
                col[lag:] = -y_a[i, : n - lag]
                cols.append(col)
            for lag in range(1, n_b + 1):
                col = np.zeros(n)
                col[lag:] = u_a[i, : n - lag]
                cols.append(col)
            if cols:
                phi = np.column_stack(cols)
                beta, _, rank, _ = np.linalg.lstsq(phi, y_a[i], rcond=None)
                if rank < phi.shape[1]:
                    warnings.warn(
                        f"rank-deficient ARX regression for system {i + 1}; "
                        "using ridge-regularized solve",
                        RuntimeWarning,
                    )
                    gram = phi.T @ phi + 1e-8 * np.eye(phi.shape[1])
                    beta = np.linalg.solve(gram, phi.T @ y_a[i])
                resid = y_a[i] - phi @ beta
            else:
                beta = np.zeros(0)
                resid = y_a[i]
            a_blocks.append(beta[:n_a])
            b_blocks.append(beta[n_a : n_a + n_b])
            residuals.append(resid)
        theta1 = ParameterVectorA(
            a=tuple(a_blocks), b=tuple(b_blocks), c=tuple(np.zeros(0) for _ in range(na))
        )
        lam_hat = lk.concentrate_lambda(np.vstack(residuals), mode,
                                        problem.options.lambda_floor)
        value = lk.nll_full(theta1, lam_hat, problem.eq, problem.data)
        trace = StageTrace(stage="arx", nll=float(value), iterations=0, reason="closed-form")
        return theta1, lam_hat, trace

    fun_grad = _shared_concentrated_marginal(problem, orders)
    x0 = np.zeros(sum(sum(o) for o in orders))
    res = minimize(fun_grad, x0, problem.options.minimize_options())
    theta1 = ParameterVectorA.from_packed(res.x, orders)
    parts = _marginal_parts(theta1, problem)
    quad = parts[1] if parts else np.nan
    lam_hat = max(quad / (len(problem.selector.observed) * n), problem.options.lambda_floor)
    trace = StageTrace(stage="arx", nll=res.fun, iterations=res.iterations, reason=res.reason)
    return theta1, lam_hat, trace


def stage2_armax_shared(problem: EstimationProblem, theta_init: ParameterVectorA
                        ) -> tuple[ParameterVectorA, float, StageTrace, MinimizeResult]:
    """Full ARMAX fit with a concentrated (by default shared) noise variance."""
    mode = _stage_mode(problem, 1)
    orders = problem.orders
    init = ParameterVectorA(
        a=theta_init.a,
        b=theta_init.b,
        c=tuple(np.zeros(o[2]) for o in orders),
    )
    if problem.fully_observed:
        fun_grad = _concentrated_full(problem, orders, mode)
    else:
        fun_grad = _shared_concentrated_marginal(problem, orders)
    res = minimize(fun_grad, init.packed(), problem.options.minimize_options())
    theta2 = ParameterVectorA.from_packed(res.x, orders)
    n = problem.data.n
    if problem.fully_observed:
        resid = lk.residuals_full(theta2, problem.eq, problem.data)
        lam_hat = lk.concentrate_lambda(resid, mode, problem.options.lambda_floor)
    else:
        parts = _marginal_parts(theta2, problem)
        quad = parts[1] if parts else np.nan
        lam_hat = max(quad / (len(problem.selector.observed) * n), problem.options.lambda_floor)
    trace = StageTrace(stage="armax-shared", nll=res.fun, iterations=res.iterations,
                       reason=res.reason)
    return theta2, lam_hat, trace, res


def stage3_full(problem: EstimationProblem, theta_init: ParameterVectorA,
                lam_init) -> tuple[ParameterVectorA, np.ndarray, StageTrace,
                                   MinimizeResult]:
    """Final fit over the noise variances as well (free per system by default)."""
    mode = _stage_mode(problem, 2)
    orders = problem.orders
    na = problem.eq.n_systems
    floor = problem.options.lambda_floor
    n_lam = na if mode == "free" else 1
    fun_grad = _variance_objective(problem, orders, n_lam)
    lam0 = np.broadcast_to(np.asarray(lam_init, dtype=float), (na,))
    lam0 = lam0 if mode == "free" else np.array([lam0.mean()])
    x_lam = np.log(np.maximum(lam0 - floor, 1e-2 * floor))
    z0 = np.concatenate([theta_init.packed(), x_lam])
    res = minimize(fun_grad, z0, problem.options.minimize_options())
    theta3 = ParameterVectorA.from_packed(res.x[:-n_lam], orders)
    lam_hat = floor + np.exp(res.x[-n_lam:])
    if mode == "shared":
        lam_hat = np.full(na, lam_hat[0])
    trace = StageTrace(stage="armax-free" if mode == "free" else "armax-shared-final",
                       nll=res.fun, iterations=res.iterations, reason=res.reason)
    return theta3, lam_hat, trace, res


def estimate(problem: EstimationProblem, with_assumptions: bool = True) -> EstimateResult:
    """Run the three-stage pipeline; never raises on optimizer divergence."""
    traces: list[StageTrace] = []
    try:
        theta1, lam1, tr1 = stage1_arx(problem)
        traces.append(tr1)
        theta2, lam2, tr2, res2 = stage2_armax_shared(problem, theta1)
        traces.append(tr2)
        # warm-start monotonicity: each stage starts at the previous stage's
        # point, and accepted steps never increase the objective.  The chain is
        # asserted against the optimizer's recorded value at its own start (the
        # previous result re-evaluated), which is immune to the re-evaluation
        # jitter of ill-conditioned covariances near the noise-zero boundary.
        slack = 1e-9 * (1.0 + abs(tr2.nll))
        assert tr2.nll <= res2.accepted_values[0] + slack, "stage 2 regressed"
        theta3, lam3, tr3, res3 = stage3_full(problem, theta2, lam2)
        traces.append(tr3)
        slack = 1e-9 * (1.0 + abs(tr3.nll))
        assert tr3.nll <= res3.accepted_values[0] + slack, "stage 3 regressed"
        best = (theta3, lam3, tr3.nll, res3.converged)
        for extra in problem.options.extra_starts:
            theta_e, lam_e, tr_e, res_e = stage3_full(problem, extra, lam2)
            traces.append(replace(tr_e, stage="extra-start"))
            if tr_e.nll < best[2]:
                best = (theta_e, lam_e, tr_e.nll, res_e.converged)
        theta3, lam3, nll3, conv = best
        converged = bool(conv and np.isfinite(nll3))
    except InitError:
        zero = ParameterVectorA.from_packed(
            np.zeros(sum(sum(o) for o in problem.orders)), problem.orders
        )
        return EstimateResult(
            theta_hat=zero,
            lambda_hat=np.full(problem.eq.n_systems, problem.options.lambda_floor),
            nll=float("inf"),
            stage_trace=traces,
            ml_mode=problem.eq.ml_mode,
            converged=False,
        )
    report = None
    if with_assumptions:
        report = assumption_report(
            theta3.to_armax(lam3),
            problem.eq.upsilon_bar_a,
            selector=problem.selector,
            r_tilde=problem.data.r_tilde,
            options=problem.options,
        )
    return EstimateResult(
        theta_hat=theta3,
        lambda_hat=np.asarray(lam3, dtype=float),
        nll=float(nll3),
        stage_trace=traces,
        ml_mode=problem.eq.ml_mode,
        converged=converged,
        assumptions=report,
    )


# ---------------------------------------------------------------------------
# assumption report
# ---------------------------------------------------------------------------


def _bartlett_min_eigenvalue(r_tilde: np.ndarray, grid_points: int) -> float | None:
    """Smallest eigenvalue of the segment-averaged periodogram over the grid."""
    if r_tilde.size == 0:
        return None
    n_chan, n = r_tilde.shape
    seg_len = max(n // 8, min(n, 32))
    n_seg = max(n // seg_len, 1)
    omegas = np.pi * np.arange(grid_points) / grid_points
    t = np.arange(seg_len)
    basis = np.exp(-1j * np.outer(omegas, t)) / np.sqrt(seg_len)
    phi = np.zeros((grid_points, n_chan, n_chan), dtype=complex)
    for s in range(n_seg):
        seg = r_tilde[:, s * seg_len : (s + 1) * seg_len]
        spectra = basis @ seg.T  # (grid, n_chan)
        phi += spectra[:, :, None] * spectra[:, None, :].conj()
    phi /= n_seg
    mins = [float(np.linalg.eigvalsh(phi[k]).min()) for k in range(grid_points)]
    return min(mins)


def assumption_report(systems, coupling, *, selector: ObservationSelector | None = None,
                      r_tilde: np.ndarray | None = None,
                      options: EstimationOptions | None = None) -> AssumptionReport:
    """Stability, cancellation, rank, noise-zero and excitation checks.

    ``systems`` are the (estimated or true) ARMAX parameters of the
    interconnected block described by ``coupling``.  Rank and excitation
    entries are filled only when a selector / input data are supplied; the
    excitation and identifiability entries are advisory, not gates.
    """
    options = options or EstimationOptions()
    systems = list(systems)
    rho = spectral_radius(systems, np.asarray(coupling, dtype=float))
    a0 = rho < 1.0 - options.tol_stab

    # A cancellation only removes a mode from the data when an output-pole is
    # shared by BOTH numerators: a common (a, b) factor alone stays observable
    # through the noise transfer and vice versa.
    min_dist = np.inf
    for s in systems:
        ra = lag_roots(np.concatenate(([1.0], s.a)))
        rb = np.roots(s.b) if s.b.shape[0] > 1 else np.zeros(0)
        rc = lag_roots(np.concatenate(([1.0], s.c)))
        for root in ra:
            db = np.abs(rb - root).min() if rb.size else np.inf
            dc = np.abs(rc - root).min() if rc.size else np.inf
            min_dist = min(min_dist, float(max(db, dc)))
    a1 = min_dist > options.tol_pz

    min_gap = np.inf
    for s in systems:
        rc = lag_roots(np.concatenate(([1.0], s.c)))
        if rc.size:
            min_gap = min(min_gap, float(np.abs(np.abs(rc) - 1.0).min()))
    a3 = min_gap > options.tol_c

    a2_ok, a2_rank = None, None
    if selector is not None:
        na = len(systems)
        stacked = np.vstack([np.eye(na), np.asarray(coupling, dtype=float)])
        sel = stacked[np.asarray(selector.observed)]
        svals = np.linalg.svd(sel, compute_uv=False)
        a2_rank = int((svals > options.rank_tol).sum())
        a2_ok = a2_rank == sel.shape[0]

    a4 = None
    if r_tilde is not None and np.asarray(r_tilde).size:
        a4 = _bartlett_min_eigenvalue(np.asarray(r_tilde, dtype=float),
                                      options.frequency_grid)

    a5 = (
        "advisory: generic identifiability is not decided automatically; "
        "check that the closed-loop map from the known inputs to the observed "
        "channels determines the open-loop transfer functions uniquely"
    )
    return AssumptionReport(
        a0_stable=bool(a0),
        spectral_radius=float(rho),
        a1_no_cancellation=bool(a1),
        min_root_distance=float(min_dist),
        a3_c_roots_ok=bool(a3),
        min_c_root_gap=float(min_gap),
        a2_rank_ok=a2_ok,
        a2_rank=a2_rank,
        a4_excitation=a4,
        a5_identifiability=a5,
    )


# ---------------------------------------------------------------------------
# sklearn-style front end
# ---------------------------------------------------------------------------


class SubnetworkMLE(BaseEstimator):
    """Scikit-learn style front end over the three-stage pipeline.

    Parameters mirror EstimationProblem; ``fit`` accepts an EstimationData
    (or a (selector, observed, r_tilde) triple via ``EstimationData``) and the
    fitted attributes carry the estimate.
    """

    def __init__(self, eq=None, orders=None, gtol=1e-6, xtol=1e-10, max_iter=500,
                 lambda_floor=LAMBDA_FLOOR, lambda_modes=("shared", "shared", "free"),
                 compute_assumptions=True):
        self.eq = eq
        self.orders = orders
        self.gtol = gtol
        self.xtol = xtol
        self.max_iter = max_iter
        self.lambda_floor = lambda_floor
        self.lambda_modes = lambda_modes
        self.compute_assumptions = compute_assumptions

    def _options(self) -> EstimationOptions:
        return EstimationOptions(
            gtol=self.gtol, xtol=self.xtol, max_iter=self.max_iter,
            lambda_floor=self.lambda_floor, lambda_modes=tuple(self.lambda_modes),
        )

    def fit(self, X: EstimationData, y=None):
        if self.eq is None or self.orders is None:
            raise ValueError("eq and orders must be set before fitting")
        problem = EstimationProblem(
            eq=self.eq, selector=X.selector, data=X,
            orders=self.orders, options=self._options(),
        )
        result = estimate(problem, with_assumptions=self.compute_assumptions)
        self.result_ = result
        self.theta_ = result.theta_hat
        self.lambda_ = result.lambda_hat
        self.nll_ = result.nll
        self.converged_ = result.converged
        self.n_iter_ = sum(t.iterations for t in result.stage_trace)
        return self

    def predict(self, X: EstimationData) -> np.ndarray:
        """Noise-free simulated observed channels under the fitted parameters."""
        self._check_fitted()
        from .simulate import simulate_equivalent

        na = self.eq.n_systems
        y, u = simulate_equivalent(
            self.theta_.to_armax(self.lambda_), self.eq, X.r_tilde,
            np.zeros((na, X.n)),
        )
        stacked = np.vstack([y, u])
        return stacked[np.asarray(X.selector.observed)]

    def score(self, X: EstimationData, y=None) -> float:
        """Mean fit value of the predicted observed channels (1 is perfect)."""
        from .evaluation import fit as fit_metric

        pred = self.predict(X)
        return float(np.mean([fit_metric(pred[i], X.observed[i])
                              for i in range(pred.shape[0])]))

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise AttributeError("this SubnetworkMLE instance is not fitted yet")
