"""Signal generation for full networks and equivalent sub-networks.

The recursive simulator advances the interconnected ARMAX difference
equations sample by sample (outputs first, then inputs, which is well defined
because every input enters with at least one delay).  The dense oracle
assembles the full stacked linear system and solves it directly; it is
O((M N)^3) and intended for verification at test scale only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChannelError, DimensionError, DivergenceError
from .network import EquivalentSubnetwork, NetworkModel
from .validation import as_matrix, check_consistent_length

OVERFLOW_LIMIT = 1e12

RADEMACHER = "rademacher"
GAUSSIAN = "gaussian"
FILE = "file"

GENERATOR_ID = "numpy.default_rng/PCG64"


@dataclass(frozen=True)
class SignalSet:
    """Time series of a simulated network over n samples."""

    y: np.ndarray
    u: np.ndarray
    r: np.ndarray
    n: int
    e: np.ndarray | None = None

    def __post_init__(self):
        check_consistent_length(self.n, y=self.y, u=self.u, r=self.r, e=self.e)
        if self.y.shape != self.u.shape:
            raise DimensionError("y and u must have identical shapes")


@dataclass(frozen=True)
class RngSpec:
    """Reproducible exogenous-input specification."""

    seed: int = 0
    input_law: str = RADEMACHER
    sigma: float = 1.0
    path: str | None = None


def draw_noise(model: NetworkModel, n: int, seed: int) -> np.ndarray:
    """Independent Gaussian disturbances e^i ~ N(0, noise_var_i), M x n."""
    if n < 1:
        raise DimensionError("n must be >= 1")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(model.noise_vars)[:, None]
    return rng.standard_normal((model.topology.m, n)) * scale


def draw_inputs(q: int, n: int, spec: RngSpec) -> np.ndarray:
    """Exogenous signals r, Q x n, reproducible from the spec seed."""
    if spec.input_law == RADEMACHER:
        rng = np.random.default_rng(spec.seed)
        return rng.choice(np.array([-1.0, 1.0]), size=(q, n))
    if spec.input_law == GAUSSIAN:
        rng = np.random.default_rng(spec.seed)
        return rng.standard_normal((q, n)) * spec.sigma
    if spec.input_law == FILE:
        if spec.path is None:
            raise ChannelError("file input law requires a path")
        arr = np.loadtxt(Path(spec.path), delimiter=",", ndmin=2)
        return as_matrix(arr, "file inputs", rows=q, cols=n)
    raise ValueError(f"unknown input law {spec.input_law!r}")


def _coefficient_table(systems) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded (m, max_lag) tables of a- and b-coefficients."""
    m = len(systems)
    pa = max([0] + [s.a.shape[0] for s in systems])
    pb = max([0] + [s.b.shape[0] for s in systems])
    amat = np.zeros((m, pa))
    bmat = np.zeros((m, pb))
    for i, s in enumerate(systems):
        amat[i, : s.a.shape[0]] = s.a
        bmat[i, : s.b.shape[0]] = s.b
    return amat, bmat


def _noise_forcing(systems, e: np.ndarray) -> np.ndarray:
    """Per-system moving-average filtered disturbance (1 + c_1 q + ...) e."""
    out = np.array(e, dtype=float)
    n = e.shape[-1]
    for i, s in enumerate(systems):
        for j, cj in enumerate(s.c, start=1):
            if cj != 0.0:
                out[..., i, j:] += cj * e[..., i, : n - j]
    return out


def _simulate_coupled(systems, coupling: np.ndarray, drive: np.ndarray,
                      forcing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance y_k = forcing_k - sum_j a_j y_{k-j} + sum_j b_j u_{k-j};
    u_k = coupling y_k + drive_k.

    ``drive`` and ``forcing`` may carry leading batch axes; the recursion is
    vectorized across them.
    """
    amat, bmat = _coefficient_table(systems)
    pa, pb = amat.shape[1], bmat.shape[1]
    n = forcing.shape[-1]
    y = np.zeros_like(forcing)
    u = np.zeros_like(forcing)
    arev = amat[:, ::-1]
    brev = bmat[:, ::-1]
    for k in range(n):
        acc = forcing[..., k].copy()
        if pa:
            j0 = min(pa, k)
            if j0:
                acc -= (arev[:, pa - j0 :] * y[..., k - j0 : k]).sum(axis=-1)
        if pb:
            j0 = min(pb, k)
            if j0:
                acc += (brev[:, pb - j0 :] * u[..., k - j0 : k]).sum(axis=-1)
        y[..., k] = acc
        u[..., k] = acc @ coupling.T + drive[..., k]
    return y, u


def _check_overflow(y: np.ndarray, u: np.ndarray) -> None:
    bad = ~np.isfinite(y) | (np.abs(y) > OVERFLOW_LIMIT)
    bad |= ~np.isfinite(u) | (np.abs(u) > OVERFLOW_LIMIT)
    if bad.any():
        collapsed = bad.reshape(-1, bad.shape[-1]).any(axis=0)
        first = int(np.flatnonzero(collapsed)[0]) + 1
        raise DivergenceError(
            f"simulation diverged (|signal| > {OVERFLOW_LIMIT:g}) at sample {first}",
            sample=first,
        )


def simulate_recursive(model: NetworkModel, r: np.ndarray, e: np.ndarray) -> SignalSet:
    """Simulate the full network sample by sample."""
    m, q = model.topology.m, model.topology.q
    r = as_matrix(r, "r", rows=q)
    e = as_matrix(e, "e", rows=m, cols=r.shape[1])
    drive = model.topology.omega @ r
    forcing = _noise_forcing(model.systems, e)
    with np.errstate(over="ignore", invalid="ignore"):
        y, u = _simulate_coupled(model.systems, model.topology.upsilon, drive, forcing)
    _check_overflow(y, u)
    return SignalSet(y=y, u=u, r=r, e=e, n=r.shape[1])


def simulate_dense_oracle(model: NetworkModel, r: np.ndarray, e: np.ndarray) -> SignalSet:
    """Solve the stacked 2MN x 2MN network equations directly (test scale)."""
    from scipy.linalg import toeplitz

    m, q = model.topology.m, model.topology.q
    r = as_matrix(r, "r", rows=q)
    n = r.shape[1]
    e = as_matrix(e, "e", rows=m, cols=n)

    ty = np.zeros((m * n, m * n))
    tu = np.zeros((m * n, m * n))
    for i, s in enumerate(model.systems):
        col_a = np.zeros(n); col_a[0] = 1.0; col_a[1 : 1 + s.a.shape[0]] = s.a
        col_b = np.zeros(n); col_b[1 : 1 + s.b.shape[0]] = s.b
        col_c = np.zeros(n); col_c[0] = 1.0; col_c[1 : 1 + s.c.shape[0]] = s.c
        ta = toeplitz(col_a, np.zeros(n))
        tb = toeplitz(col_b, np.zeros(n))
        tc = toeplitz(col_c, np.zeros(n))
        sl = slice(i * n, (i + 1) * n)
        ty[sl, sl] = np.linalg.solve(tc, ta)
        tu[sl, sl] = np.linalg.solve(tc, tb)

    eye_mn = np.eye(m * n)
    a_mat = np.block(
        [[ty, -tu], [-np.kron(model.topology.upsilon, np.eye(n)), eye_mn]]
    )
    rhs = np.concatenate(
        [e.reshape(-1), np.kron(model.topology.omega, np.eye(n)) @ r.reshape(-1)]
    )
    cond = np.linalg.cond(a_mat)
    if not np.isfinite(cond) or cond > 1e14:
        raise DivergenceError("stacked network matrix is numerically singular")
    x = np.linalg.solve(a_mat, rhs)
    y = x[: m * n].reshape(m, n)
    u = x[m * n :].reshape(m, n)
    return SignalSet(y=y, u=u, r=r, e=e, n=n)


def resolve_channels(eq: EquivalentSubnetwork, r_tilde) -> np.ndarray:
    """Accept an ordered array or a channel-keyed mapping of augmented inputs."""
    if isinstance(r_tilde, dict):
        rows = []
        for key in eq.r_channels:
            name = f"{key[0]}{key[1]}"
            if key in r_tilde:
                rows.append(np.asarray(r_tilde[key], dtype=float))
            elif name in r_tilde:
                rows.append(np.asarray(r_tilde[name], dtype=float))
            else:
                raise ChannelError(f"augmented input channel {name} missing from data")
        if not rows:
            return np.zeros((0, 0))
        return np.vstack(rows)
    arr = np.asarray(r_tilde, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != len(eq.r_channels):
        raise ChannelError(
            f"expected {len(eq.r_channels)} augmented input channels, got shape {arr.shape}"
        )
    return arr


def simulate_equivalent(
    params_a, eq: EquivalentSubnetwork, r_tilde, e_a: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the reduced target model driven by the augmented inputs."""
    params_a = list(params_a)
    rt = resolve_channels(eq, r_tilde)
    na = len(params_a)
    if na != eq.n_systems:
        raise DimensionError(f"expected {eq.n_systems} systems, got {na}")
    if rt.shape[0]:
        n = rt.shape[1]
    else:
        n = np.asarray(e_a).shape[-1]
    e_a = as_matrix(e_a, "e_a", rows=na, cols=n)
    drive = eq.omega_tilde_a @ rt if rt.shape[0] else np.zeros((na, n))
    forcing = _noise_forcing(params_a, e_a)
    with np.errstate(over="ignore", invalid="ignore"):
        y, u = _simulate_coupled(params_a, eq.upsilon_bar_a, drive, forcing)
    _check_overflow(y, u)
    return y, u
