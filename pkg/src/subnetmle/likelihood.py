"""Gaussian negative log-likelihoods for the target sub-network.

Two forms are provided.  ``nll_full`` applies when every target output is
available: the data map to the disturbances through a unit-determinant
triangular transformation (outputs enter monically, inputs with at least one
delay), so the NLL is a sum of per-system white-noise terms.  ``nll_marginal``
handles arbitrary observed channel subsets: the observed stack is Gaussian
with mean equal to the noise-free simulation and covariance S diag(lambda) S^T,
where the columns of S are the closed-loop disturbance responses.

Every closed-loop response is a rational fraction with the common denominator
D = det(diag(A_i) - diag(B_i) Upsilon_A), so S factors into T_D^{-1} times a
banded Toeplitz numerator block P.  The covariance inverse and determinant
then reduce to the banded Gram matrix K = P diag(lambda) P^T, which keeps the
cost linear in the sample count.  Gradients are computed analytically from
cofactor-derivative polynomials, a selected inverse of K, and
injection-response convolutions for the mean sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve

from . import polyalg as pa
from .banded import (
    block_selected_inverse,
    cholesky_banded_spd,
    inverse_band_diagonals,
    solve_banded_cholesky,
    upper_banded_storage,
)
from .errors import (
    ChannelError,
    DimensionError,
    DomainError,
    ObservationError,
    RankError,
)
from .network import ArmaxParams, EquivalentSubnetwork
from .simulate import SignalSet, _simulate_coupled
from .toeplitz import MONIC, apply, from_polynomial, solve_unit_lower, solve_unit_lower_transpose
from .validation import as_matrix, readonly

LAMBDA_FLOOR = 1e-10

FULL = "full"
MARGINAL = "marginal"


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationSelector:
    """Ordered subset of the 2|A| sub-network channels (outputs first, inputs after)."""

    observed: tuple[int, ...]

    def __post_init__(self):
        obs = tuple(int(c) for c in self.observed)
        if not obs:
            raise ValueError("selector must contain at least one channel")
        if len(set(obs)) != len(obs):
            raise ValueError("selector channels must be unique")
        if min(obs) < 0:
            raise ValueError("channel indices are 0-based and nonnegative")
        object.__setattr__(self, "observed", obs)

    def validate(self, n_systems: int) -> None:
        if max(self.observed) >= 2 * n_systems:
            raise ValueError(
                f"channel {max(self.observed)} outside the 2*{n_systems} sub-network channels"
            )

    def y_channels(self, n_systems: int) -> tuple[int, ...]:
        return tuple(c for c in self.observed if c < n_systems)

    def covers_all_outputs(self, n_systems: int) -> bool:
        return set(range(n_systems)) <= set(self.observed)


def selector_from_names(names, set_a) -> ObservationSelector:
    """Build a selector from channel names like "y3" / "u2" (global system ids)."""
    pos = {sys_id: k for k, sys_id in enumerate(set_a)}
    channels = []
    for name in names:
        kind, idx = name[0], int(name[1:])
        if kind not in ("y", "u") or idx not in pos:
            raise ChannelError(f"channel {name!r} is not a sub-network channel")
        channels.append(pos[idx] + (0 if kind == "y" else len(set_a)))
    return ObservationSelector(observed=tuple(channels))


@dataclass(frozen=True)
class ParameterVectorA:
    """Structural coefficients of the target systems, packable as
    (a^1..a^|A|, b^1..b^|A|, c^1..c^|A|)."""

    a: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    c: tuple[np.ndarray, ...]

    def __post_init__(self):
        for name in ("a", "b", "c"):
            arrs = tuple(readonly(np.atleast_1d(np.asarray(v, dtype=float)))
                         for v in getattr(self, name))
            object.__setattr__(self, name, arrs)
        if not len(self.a) == len(self.b) == len(self.c):
            raise DimensionError("a, b, c must cover the same number of systems")

    @property
    def n_systems(self) -> int:
        return len(self.a)

    @property
    def orders(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(
            (self.a[i].shape[0], self.b[i].shape[0], self.c[i].shape[0])
            for i in range(self.n_systems)
        )

    def packed(self) -> np.ndarray:
        parts = [v for v in self.a] + [v for v in self.b] + [v for v in self.c]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_packed(cls, theta, orders) -> "ParameterVectorA":
        theta = np.asarray(theta, dtype=float)
        orders = tuple(tuple(o) for o in orders)
        total = sum(sum(o) for o in orders)
        if theta.shape != (total,):
            raise DimensionError(f"expected packed length {total}, got {theta.shape}")
        pos = 0
        blocks: dict[int, list[np.ndarray]] = {0: [], 1: [], 2: []}
        for kind in range(3):
            for o in orders:
                blocks[kind].append(theta[pos : pos + o[kind]])
                pos += o[kind]
        return cls(a=tuple(blocks[0]), b=tuple(blocks[1]), c=tuple(blocks[2]))

    @classmethod
    def from_systems(cls, systems) -> "ParameterVectorA":
        systems = list(systems)
        return cls(
            a=tuple(s.a for s in systems),
            b=tuple(s.b for s in systems),
            c=tuple(s.c for s in systems),
        )

    def to_armax(self, noise_vars) -> list[ArmaxParams]:
        noise_vars = np.broadcast_to(np.asarray(noise_vars, dtype=float), (self.n_systems,))
        return [
            ArmaxParams(a=self.a[i], b=self.b[i], c=self.c[i], noise_var=float(noise_vars[i]))
            for i in range(self.n_systems)
        ]

    def entries(self):
        """(kind, system, lag) triples in packing order."""
        out = []
        for kind, block in (("a", self.a), ("b", self.b), ("c", self.c)):
            for m, coeffs in enumerate(block):
                for lag in range(1, coeffs.shape[0] + 1):
                    out.append((kind, m, lag))
        return out


@dataclass(frozen=True)
class EstimationData:
    """Observed channel series plus the known augmented exogenous inputs."""

    selector: ObservationSelector
    observed: np.ndarray
    r_tilde: np.ndarray
    n: int

    def __post_init__(self):
        obs = readonly(as_matrix(self.observed, "observed",
                                 rows=len(self.selector.observed), cols=self.n))
        rt = readonly(as_matrix(self.r_tilde, "r_tilde", cols=self.n))
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "r_tilde", rt)

    def channel(self, channel_id: int) -> np.ndarray:
        try:
            row = self.selector.observed.index(channel_id)
        except ValueError as exc:
            raise ObservationError(f"channel {channel_id} not present in data") from exc
        return self.observed[row]


def estimation_data_from_signals(
    signals: SignalSet,
    eq: EquivalentSubnetwork,
    selector: ObservationSelector,
) -> EstimationData:
    """Extract observed target channels and augmented inputs from a signal set.

    Reads only rows belonging to the target systems, the connected separator
    outputs, and the exogenous channels that excite the target: remainder-side
    signals never enter the estimation path.
    """
    set_a = eq.set_a
    if not set_a:
        raise ValueError("equivalent sub-network does not carry its target index set")
    na = len(set_a)
    selector.validate(na)
    rows = []
    for ch in selector.observed:
        sys_id = set_a[ch % na]
        rows.append(signals.y[sys_id - 1] if ch < na else signals.u[sys_id - 1])
    rt_rows = []
    for kind, idx in eq.r_channels:
        rt_rows.append(signals.r[idx - 1] if kind == "r" else signals.y[idx - 1])
    r_tilde = np.vstack(rt_rows) if rt_rows else np.zeros((0, signals.n))
    return EstimationData(
        selector=selector,
        observed=np.vstack(rows),
        r_tilde=r_tilde,
        n=signals.n,
    )


# ---------------------------------------------------------------------------
# fully observed path
# ---------------------------------------------------------------------------


def _noise_var_vector(lam, n_systems: int) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(lam, dtype=float), (n_systems,)).copy()
    if np.any(arr < LAMBDA_FLOOR):
        raise DomainError(f"noise variance below floor {LAMBDA_FLOOR:g}")
    return arr


def _recover_io(theta: ParameterVectorA, eq: EquivalentSubnetwork, data: EstimationData):
    """Assemble (y_A, u_A) from observed channels, reconstructing inputs."""
    na = theta.n_systems
    selector = data.selector
    selector.validate(na)
    missing = [c for c in range(na) if c not in selector.observed]
    if missing:
        raise ObservationError(
            f"outputs {missing} unobserved; the fully-observed form needs every y_A "
            "channel (use the marginal form instead)"
        )
    if data.r_tilde.shape[0] != len(eq.r_channels):
        raise ChannelError(
            f"data supplies {data.r_tilde.shape[0]} augmented inputs, "
            f"equivalent sub-network requires {len(eq.r_channels)}"
        )
    y_a = np.vstack([data.channel(c) for c in range(na)])
    u_rec = eq.upsilon_bar_a @ y_a
    if len(eq.r_channels):
        u_rec = u_rec + eq.omega_tilde_a @ data.r_tilde
    u_a = np.empty_like(y_a)
    for c in range(na, 2 * na):
        if c in selector.observed:
            u_a[c - na] = data.channel(c)
        else:
            u_a[c - na] = u_rec[c - na]
    return y_a, u_a


def residuals_full(theta: ParameterVectorA, eq: EquivalentSubnetwork,
                   data: EstimationData) -> np.ndarray:
    """Per-system disturbance reconstructions e^i = T_c^{-1}(T_a y^i - T_b u^i)."""
    y_a, u_a = _recover_io(theta, eq, data)
    n = data.n
    out = np.empty((theta.n_systems, n))
    for i in range(theta.n_systems):
        ta = from_polynomial(MONIC, theta.a[i], n)
        tb = from_polynomial("strictly-delayed", theta.b[i], n)
        tc = from_polynomial(MONIC, theta.c[i], n)
        out[i] = solve_unit_lower(tc, apply(ta, y_a[i]) - apply(tb, u_a[i]))
    return out


def nll_full(theta: ParameterVectorA, lam, eq: EquivalentSubnetwork,
             data: EstimationData) -> float:
    """Sum of per-system Gaussian white-noise NLL terms.

    Valid because the map from the observed outputs to the disturbances is
    unit lower triangular in time (monic output side, strictly delayed input
    side), hence has unit Jacobian determinant.
    """
    lam_vec = _noise_var_vector(lam, theta.n_systems)
    resid = residuals_full(theta, eq, data)
    n = data.n
    value = 0.0
    for i in range(theta.n_systems):
        value += 0.5 * n * np.log(2.0 * np.pi * lam_vec[i])
        value += 0.5 * float(resid[i] @ resid[i]) / lam_vec[i]
    return float(value)


def nll_full_grad(theta: ParameterVectorA, lam, eq: EquivalentSubnetwork,
                  data: EstimationData) -> tuple[float, np.ndarray, np.ndarray]:
    """NLL plus gradients w.r.t. the packed coefficients and log noise variances.

    The adjoint of each residual map is a transposed unit-triangular solve, so
    every coefficient gradient is a lagged inner product with w = T_c^{-T} e.
    """
    lam_vec = _noise_var_vector(lam, theta.n_systems)
    y_a, u_a = _recover_io(theta, eq, data)
    n = data.n
    na = theta.n_systems
    value = 0.0
    grads_a, grads_b, grads_c, grad_loglam = [], [], [], np.zeros(na)
    for i in range(na):
        ta = from_polynomial(MONIC, theta.a[i], n)
        tb = from_polynomial("strictly-delayed", theta.b[i], n)
        tc = from_polynomial(MONIC, theta.c[i], n)
        resid = solve_unit_lower(tc, apply(ta, y_a[i]) - apply(tb, u_a[i]))
        ss = float(resid @ resid)
        value += 0.5 * n * np.log(2.0 * np.pi * lam_vec[i]) + 0.5 * ss / lam_vec[i]
        w = solve_unit_lower_transpose(tc, resid) / lam_vec[i]
        ga = np.array([w[lag:] @ y_a[i][: n - lag] for lag in range(1, theta.a[i].shape[0] + 1)])
        gb = np.array([-(w[lag:] @ u_a[i][: n - lag]) for lag in range(1, theta.b[i].shape[0] + 1)])
        gc = np.array([-(w[lag:] @ resid[: n - lag]) for lag in range(1, theta.c[i].shape[0] + 1)])
        grads_a.append(ga)
        grads_b.append(gb)
        grads_c.append(gc)
        grad_loglam[i] = 0.5 * n - 0.5 * ss / lam_vec[i]
    grad_theta = np.concatenate(grads_a + grads_b + grads_c) if na else np.zeros(0)
    return float(value), grad_theta, grad_loglam


def concentrate_lambda(residuals: np.ndarray, mode: str = "free",
                       floor: float = LAMBDA_FLOOR):
    """Closed-form noise-variance optimizers given residuals.

    free: per-system mean square, floored.  shared: pooled mean square.
    """
    resid = np.asarray(residuals, dtype=float)
    if not np.isfinite(resid).all():
        raise ValueError("residuals must be finite")
    n = resid.shape[-1]
    per_system = (resid * resid).sum(axis=-1) / n
    if mode == "free":
        return np.maximum(per_system, floor)
    if mode == "shared":
        return float(max(per_system.mean(), floor))
    raise ValueError(f"unknown concentration mode {mode!r}")


# ---------------------------------------------------------------------------
# marginal path: closed-loop polynomial fraction
# ---------------------------------------------------------------------------


def _poly_matrix(theta: ParameterVectorA, eq: EquivalentSubnetwork):
    apolys = [np.concatenate(([1.0], theta.a[i])) for i in range(theta.n_systems)]
    bpolys = [np.concatenate(([0.0], theta.b[i])) for i in range(theta.n_systems)]
    cpolys = [np.concatenate(([1.0], theta.c[i])) for i in range(theta.n_systems)]
    ups = eq.upsilon_bar_a
    na = theta.n_systems
    mat = []
    for i in range(na):
        row = []
        for j in range(na):
            entry = apolys[i] if i == j else np.zeros(1)
            if ups[i, j] != 0:
                entry = pa.padd(entry, -ups[i, j] * bpolys[i])
            row.append(entry)
        mat.append(row)
    return mat, apolys, bpolys, cpolys


def _channel_numerators(theta: ParameterVectorA, eq: EquivalentSubnetwork,
                        obs_channels, adj, cpolys):
    """p[i][o]: numerator of the transfer from disturbance i to observed channel o."""
    na = theta.n_systems
    ups = eq.upsilon_bar_a
    p = [[None] * len(obs_channels) for _ in range(na)]
    for o, ch in enumerate(obs_channels):
        for i in range(na):
            if ch < na:
                p[i][o] = pa.pconv(adj[ch][i], cpolys[i])
            else:
                m = ch - na
                acc = np.zeros(1)
                for j in range(na):
                    if ups[m, j] != 0:
                        acc = pa.padd(acc, ups[m, j] * pa.pconv(adj[j][i], cpolys[i]))
                p[i][o] = acc
    return p


def _numerator_sparse(p, n: int, n_obs: int, na: int) -> sp.csr_matrix:
    """Time-major stacked Toeplitz numerator block: row (t, o), column (k, i)."""
    rows, cols, vals = [], [], []
    for i in range(na):
        for o in range(n_obs):
            poly = p[i][o]
            for lag in range(len(poly)):
                v = poly[lag]
                if v == 0.0 or lag >= n:
                    continue
                k = np.arange(0, n - lag)
                rows.append((k + lag) * n_obs + o)
                cols.append(k * na + i)
                vals.append(np.full(n - lag, v))
    if not rows:
        return sp.csr_matrix((n * n_obs, n * na))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n_obs, n * na),
    )


def _mean_simulation(theta: ParameterVectorA, eq: EquivalentSubnetwork,
                     r_tilde: np.ndarray, n: int):
    """Noise-free simulation of the equivalent sub-network (mean of the data)."""
    na = theta.n_systems
    drive = eq.omega_tilde_a @ r_tilde if r_tilde.shape[0] else np.zeros((na, n))
    systems = theta.to_armax(1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        y, u = _simulate_coupled(systems, eq.upsilon_bar_a, drive, np.zeros((na, n)))
    return y, u


class _MarginalWork:
    """Shared intermediates of one marginal NLL evaluation."""

    def __init__(self, theta: ParameterVectorA, lam_vec: np.ndarray,
                 eq: EquivalentSubnetwork, selector: ObservationSelector,
                 data: EstimationData):
        na = theta.n_systems
        selector.validate(na)
        n = data.n
        obs = selector.observed
        if data.r_tilde.shape[0] != len(eq.r_channels):
            raise ChannelError(
                f"data supplies {data.r_tilde.shape[0]} augmented inputs, "
                f"equivalent sub-network requires {len(eq.r_channels)}"
            )
        self.theta, self.lam, self.eq, self.data = theta, lam_vec, eq, data
        self.n, self.na, self.n_obs, self.obs = n, na, len(obs), obs

        self.ahat, self.apolys, self.bpolys, self.cpolys = _poly_matrix(theta, eq)
        self.dpoly = pa.ptrim(pa.poly_det(self.ahat))
        self.adj = pa.poly_adjugate(self.ahat)
        self.p = _channel_numerators(theta, eq, obs, self.adj, self.cpolys)
        self.plen = max(max(len(q) for q in row) for row in self.p)

        ymu, umu = _mean_simulation(theta, eq, data.r_tilde, n)
        self.ymu, self.umu = ymu, umu
        xmu = np.vstack([ymu, umu])
        self.mu = xmu[np.asarray(obs)]
        z = np.vstack([data.channel(c) for c in obs])
        self.dres = z - self.mu

        self.w = np.empty(n * self.n_obs)
        for o in range(self.n_obs):
            self.w[o :: self.n_obs] = np.convolve(self.dpoly, self.dres[o])[:n]

        self.P = _numerator_sparse(self.p, n, self.n_obs, na)
        lam_cols = np.tile(lam_vec, n)
        self.K = (self.P.multiply(lam_cols[None, :]) @ self.P.T).tocsr()
        self.bw = (self.plen - 1) * self.n_obs + (self.n_obs - 1)

    def factorize(self):
        ab = upper_banded_storage(self.K, self.bw)
        if not np.isfinite(ab).all():
            raise DomainError("observed-channel covariance is not finite")
        try:
            self.factor = cholesky_banded_spd(ab)
        except np.linalg.LinAlgError as exc:
            raise RankError(
                "observed-channel covariance is not positive definite; the "
                "selection of observed signals loses full row rank"
            ) from exc
        diag = self.factor[-1]
        self.logdet = 2.0 * float(np.log(diag).sum())
        self.u = solve_banded_cholesky(self.factor, self.w)
        self.quad = float(self.w @ self.u)

    @property
    def value(self) -> float:
        return 0.5 * self.logdet + 0.5 * self.quad + 0.5 * self.n * self.n_obs * np.log(2 * np.pi)


def nll_marginal(theta: ParameterVectorA, lam, eq: EquivalentSubnetwork,
                 selector: ObservationSelector, data: EstimationData) -> float:
    """Exact Gaussian NLL of the selected channels.

    Mean: noise-free simulation of the equivalent sub-network.  Covariance:
    S diag(lambda) S^T with S the disturbance-response columns, evaluated in
    the banded numerator/denominator factorization (identical value, linear
    cost in the sample count).
    """
    lam_vec = _noise_var_vector(lam, theta.n_systems)
    with np.errstate(over="ignore", invalid="ignore"):
        work = _MarginalWork(theta, lam_vec, eq, selector, data)
        if not np.isfinite(work.w).all():
            return float("inf")
        try:
            work.factorize()
        except DomainError:
            return float("inf")
    value = float(work.value)
    return value if np.isfinite(value) else float("inf")


def _injection_responses(theta: ParameterVectorA, eq: EquivalentSubnetwork, n: int):
    """g[m]: (2|A|, n) response of all channels to a unit output injection at m."""
    na = theta.n_systems
    systems = theta.to_armax(1.0)
    forcing = np.zeros((na, na, n))
    for m in range(na):
        forcing[m, m, 0] = 1.0
    drive = np.zeros((na, na, n))
    with np.errstate(over="ignore", invalid="ignore"):
        y, u = _simulate_coupled(systems, eq.upsilon_bar_a, drive, forcing)
    return np.concatenate([y, u], axis=1)


def _dahat_map(kind: str, m: int, lag: int, eq: EquivalentSubnetwork):
    """Nonzero entry-derivative polynomials of the closed-loop matrix."""
    out = {}
    if kind == "a":
        poly = np.zeros(lag + 1)
        poly[lag] = 1.0
        out[(m, m)] = poly
    elif kind == "b":
        ups = eq.upsilon_bar_a
        for j in range(ups.shape[1]):
            if ups[m, j] != 0:
                poly = np.zeros(lag + 1)
                poly[lag] = -ups[m, j]
                out[(m, j)] = poly
    return out


def _cofactor_derivative(ahat, row: int, col: int, dmap) -> np.ndarray:
    """Derivative of the (row, col) cofactor under entry perturbations dmap."""
    n = len(ahat)
    if n == 1:
        return np.zeros(1)
    sgn = 1.0 if (row + col) % 2 == 0 else -1.0
    sub = pa.poly_minor(ahat, row, col)
    rows_idx = [i for i in range(n) if i != row]
    cols_idx = [j for j in range(n) if j != col]
    acc = np.zeros(1)
    for (pp, qq), dpoly in dmap.items():
        if pp == row or qq == col:
            continue
        pi = rows_idx.index(pp)
        qi = cols_idx.index(qq)
        inner = pa.poly_cofactor(sub, pi, qi)
        acc = pa.padd(acc, sgn * pa.pconv(inner, dpoly))
    return acc


def nll_marginal_grad(theta: ParameterVectorA, lam, eq: EquivalentSubnetwork,
                      selector: ObservationSelector, data: EstimationData
                      ) -> tuple[float, np.ndarray, np.ndarray]:
    """Marginal NLL with analytic gradients w.r.t. packed theta and log lambda."""
    lam_vec = _noise_var_vector(lam, theta.n_systems)
    with np.errstate(over="ignore", invalid="ignore"):
        work = _MarginalWork(theta, lam_vec, eq, selector, data)
        if not np.isfinite(work.w).all():
            raise DomainError("objective is not finite at the requested point")
        work.factorize()
        if not np.isfinite(work.value):
            raise DomainError("objective is not finite at the requested point")
        value, grad_theta, grad_loglam = _marginal_gradient_terms(work, theta, lam_vec, eq)
    if not (np.isfinite(grad_theta).all() and np.isfinite(grad_loglam).all()):
        raise DomainError("gradient is not finite at the requested point")
    return value, grad_theta, grad_loglam


def _marginal_gradient_terms(work: "_MarginalWork", theta: ParameterVectorA,
                             lam_vec: np.ndarray, eq: EquivalentSubnetwork
                             ) -> tuple[float, np.ndarray, np.ndarray]:
    n, na, n_obs, obs = work.n, work.na, work.n_obs, work.obs
    u = work.u
    uresh = u.reshape(n, n_obs)

    entries = theta.entries()

    # derivative polynomials of D, adj, C -> dp tables per parameter
    dmaps = [_dahat_map(kind, m, lag, eq) for kind, m, lag in entries]
    dD_list, dp_list = [], []
    for (kind, m, lag), dmap in zip(entries, dmaps):
        dD = np.zeros(1)
        for (pp, qq), dpoly in dmap.items():
            dD = pa.padd(dD, pa.pconv(pa.poly_cofactor(work.ahat, pp, qq), dpoly))
        dD_list.append(dD)
        dadj_cache: dict[tuple[int, int], np.ndarray] = {}

        def dadj(i: int, j: int, dmap=dmap) -> np.ndarray:
            if (i, j) not in dadj_cache:
                dadj_cache[(i, j)] = _cofactor_derivative(work.ahat, j, i, dmap)
            return dadj_cache[(i, j)]

        dp = [[None] * n_obs for _ in range(na)]
        for o, ch in enumerate(obs):
            for i in range(na):
                if ch < na:
                    term = pa.pconv(dadj(ch, i), work.cpolys[i])
                    if kind == "c" and i == m:
                        dc = np.zeros(lag + 1)
                        dc[lag] = 1.0
                        term = pa.padd(term, pa.pconv(work.adj[ch][i], dc))
                else:
                    mm = ch - na
                    term = np.zeros(1)
                    for j in range(na):
                        if eq.upsilon_bar_a[mm, j] != 0:
                            t2 = pa.pconv(dadj(j, i), work.cpolys[i])
                            if kind == "c" and i == m:
                                dc = np.zeros(lag + 1)
                                dc[lag] = 1.0
                                t2 = pa.padd(t2, pa.pconv(work.adj[j][i], dc))
                            term = pa.padd(term, eq.upsilon_bar_a[mm, j] * t2)
                dp[i][o] = term
        dp_list.append(dp)

    plen_d = max(
        [work.plen]
        + [len(q) for dp in dp_list for row in dp for q in row]
        + [len(d) for d in dD_list]
    )
    bs = (plen_d - 1) * n_obs + n_obs  # covers every inverse entry the traces touch

    sig_d, sig_s = block_selected_inverse(work.K, bs)
    kdiag = inverse_band_diagonals(sig_d, sig_s, n * n_obs)
    # strided cumulative sums per (delta, residue)
    sc = {
        delta: np.stack(
            [np.concatenate(([0.0], np.cumsum(arr[o::n_obs]))) for o in range(n_obs)]
        )
        for delta, arr in kdiag.items()
    }

    def diag_strided_sum(delta: int, o_col: int, start: int, count: int) -> float:
        if count <= 0:
            return 0.0
        table = sc[delta][o_col]
        hi = min(start + count, table.shape[0] - 1)
        if start >= hi:
            return 0.0
        return float(table[hi] - table[start])

    # T table: Ttab[i][o][lag] = sum_k (K^{-1} P)[(k+lag) n_obs + o, k na + i]
    max_lag = plen_d
    ttab = np.zeros((na, n_obs, max_lag))
    for i in range(na):
        for o in range(n_obs):
            for lag in range(max_lag):
                acc = 0.0
                for o2 in range(n_obs):
                    poly = work.p[i][o2]
                    for lag2 in range(len(poly)):
                        v = poly[lag2]
                        if v == 0.0:
                            continue
                        count = n - max(lag, lag2)
                        delta = (lag - lag2) * n_obs + (o - o2)
                        if delta >= 0:
                            acc += v * diag_strided_sum(delta, o2, lag2, count)
                        else:
                            acc += v * diag_strided_sum(-delta, o, lag, count)
                ttab[i, o, lag] = acc

    # P^T u per disturbance block, and injection responses for mean sensitivities
    ptu = (work.P.T @ u).reshape(n, na)
    g = _injection_responses(theta, eq, n)
    g_obs = g[:, np.asarray(obs), :]  # (na, n_obs, n)

    # correlations for the dD terms: xc[o][lag] = sum_k u_o[k] * dres_o[k - lag]
    deg_max = max(len(d) for d in dD_list)
    xc = np.zeros((n_obs, deg_max))
    for o in range(n_obs):
        for lag in range(deg_max):
            xc[o, lag] = float(uresh[lag:, o] @ work.dres[o][: n - lag])
    # T_D^T u per observed channel
    vtd = np.empty((n_obs, n))
    for o in range(n_obs):
        vtd[o] = np.convolve(work.dpoly, uresh[:, o][::-1])[:n][::-1]

    grad_theta = np.zeros(len(entries))
    for jidx, ((kind, m, lag), dD, dp) in enumerate(zip(entries, dD_list, dp_list)):
        trace = 0.0
        quad = 0.0
        for i in range(na):
            li = lam_vec[i]
            for o in range(n_obs):
                poly = dp[i][o]
                nz = np.flatnonzero(poly)
                if nz.size:
                    trace += 2.0 * li * float(poly[nz] @ ttab[i, o, nz])
                    dq = np.zeros(n)
                    for lag2 in nz:
                        v = poly[lag2]
                        dq[: n - lag2] += v * uresh[lag2:, o]
                    quad += 2.0 * li * float(dq @ ptu[:, i])
        # mean sensitivity via injection-response convolution
        if kind == "a":
            base = work.ymu[m]
        elif kind == "b":
            base = work.umu[m]
        else:
            base = None
        udw = 0.0
        for o in range(n_obs):
            udw += float(dD[: xc.shape[1]] @ xc[o, : len(dD)])
        if base is not None:
            f = np.zeros(n)
            f[lag:] = base[: n - lag]
            if kind == "a":
                f = -f
            dmu = fftconvolve(g_obs[m], f[None, :], axes=-1)[:, :n]
            udw -= float((vtd * dmu).sum())
        grad_theta[jidx] = 0.5 * trace - 0.5 * quad + udw

    grad_loglam = np.zeros(na)
    for i in range(na):
        trace = 0.0
        for o in range(n_obs):
            poly = work.p[i][o]
            nz = np.flatnonzero(poly)
            if nz.size:
                trace += float(poly[nz] @ ttab[i, o, nz])
        pu = ptu[:, i]
        grad_loglam[i] = lam_vec[i] * (0.5 * trace - 0.5 * float(pu @ pu))

    return float(work.value), grad_theta, grad_loglam


# ---------------------------------------------------------------------------
# public gradient contract
# ---------------------------------------------------------------------------


def gradient(objective: str, theta: ParameterVectorA, lam, eq: EquivalentSubnetwork,
             data: EstimationData, selector: ObservationSelector | None = None) -> np.ndarray:
    """Gradient of the requested NLL form in packed (theta, log lambda) coordinates.

    A scalar lambda is treated as shared: its single log-coordinate gradient
    is the sum of the per-system ones.
    """
    shared = np.ndim(lam) == 0
    if objective == FULL:
        value, gt, gl = nll_full_grad(theta, lam, eq, data)
    elif objective == MARGINAL:
        if selector is None:
            selector = data.selector
        value, gt, gl = nll_marginal_grad(theta, lam, eq, selector, data)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    if not np.isfinite(value):
        raise DomainError("objective is not finite at the requested point")
    if shared:
        gl = np.array([gl.sum()])
    return np.concatenate([gt, gl])
