"""Network topology, ARMAX parameterization and sub-network separation.

Vertices 1..M are systems, vertices M+1..M+Q are exogenous signals.  The
interconnection matrices use receiver-row semantics: ``upsilon[i, j] != 0``
means output j feeds input i, matching u = upsilon @ y + omega @ r.  There is
a directed edge j -> i exactly when ``upsilon[i, j]`` (or, for exogenous
source j = M+q, ``omega[i, q]``) is nonzero.

All indices in the public API are 1-based, following the usual block-diagram
numbering; internal arrays are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SeparationError, TopologyError
from .validation import as_matrix, as_vector, readonly

TRUE_ML = "true_ml"
APPROXIMATE_ML = "approximate_ml"


@dataclass(frozen=True)
class ArmaxParams:
    """Coefficients and disturbance variance of one ARMAX system.

    ``a``, ``b``, ``c`` hold the lagged coefficients (lag 1 upward); the
    leading coefficients of the a- and c-polynomials are implicitly 1, and the
    b-polynomial carries at least one sample of delay by construction.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    noise_var: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, readonly(as_vector(getattr(self, name), name)))
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @property
    def orders(self) -> tuple[int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])


@dataclass(frozen=True)
class Topology:
    """Signed interconnection structure of M systems and Q exogenous signals."""

    m: int
    q: int
    upsilon: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        ups = readonly(as_matrix(self.upsilon, "upsilon", rows=self.m, cols=self.m))
        om = readonly(as_matrix(self.omega, "omega", rows=self.m, cols=self.q))
        object.__setattr__(self, "upsilon", ups)
        object.__setattr__(self, "omega", om)

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges (from, to) over vertices 1..M+Q."""
        out = []
        for i in range(self.m):
            for j in range(self.m):
                if self.upsilon[i, j] != 0:
                    out.append((j + 1, i + 1))
            for qidx in range(self.q):
                if self.omega[i, qidx] != 0:
                    out.append((self.m + qidx + 1, i + 1))
        return out


@dataclass(frozen=True)
class NetworkModel:
    """Topology plus the per-system ARMAX parameters."""

    topology: Topology
    systems: tuple[ArmaxParams, ...]

    def __post_init__(self):
        systems = tuple(self.systems)
        if len(systems) != self.topology.m:
            raise ValueError(
                f"{len(systems)} systems supplied for a topology of {self.topology.m}"
            )
        object.__setattr__(self, "systems", systems)

    @property
    def noise_vars(self) -> np.ndarray:
        return np.array([s.noise_var for s in self.systems])


@dataclass(frozen=True)
class Partition:
    """Disjoint split of system indices 1..M into target A, remainder B, separator C."""

    set_a: tuple[int, ...]
    set_b: tuple[int, ...]
    set_c: tuple[int, ...]

    def __post_init__(self):
        a, b, c = (tuple(self.set_a), tuple(self.set_b), tuple(self.set_c))
        object.__setattr__(self, "set_a", a)
        object.__setattr__(self, "set_b", b)
        object.__setattr__(self, "set_c", c)
        if not a:
            raise ValueError("target set A must be nonempty")
        combined = list(a) + list(b) + list(c)
        if len(set(combined)) != len(combined):
            raise ValueError("partition sets must be disjoint")

    def validate_cover(self, m: int) -> None:
        combined = set(self.set_a) | set(self.set_b) | set(self.set_c)
        if combined != set(range(1, m + 1)):
            raise ValueError(f"partition must cover systems 1..{m}, got {sorted(combined)}")


@dataclass(frozen=True)
class EquivalentSubnetwork:
    """Reduced model in which separator outputs act as known exogenous inputs.

    ``r_channels`` lists the augmented exogenous channels in order: entries
    ("r", j) refer to original exogenous signal j, entries ("y", i) to the
    separator output of system i.
    """

    upsilon_bar_a: np.ndarray
    omega_tilde_a: np.ndarray
    r_channels: tuple[tuple[str, int], ...]
    ml_mode: str
    set_a: tuple[int, ...] = ()

    def __post_init__(self):
        na = len(self.set_a) if self.set_a else self.upsilon_bar_a.shape[0]
        ups = readonly(as_matrix(self.upsilon_bar_a, "upsilon_bar_a", rows=na, cols=na))
        om = readonly(
            as_matrix(self.omega_tilde_a, "omega_tilde_a", rows=na, cols=len(self.r_channels))
        )
        object.__setattr__(self, "upsilon_bar_a", ups)
        object.__setattr__(self, "omega_tilde_a", om)
        object.__setattr__(self, "r_channels", tuple(self.r_channels))
        object.__setattr__(self, "set_a", tuple(self.set_a))
        if om.shape[1] and not om.any(axis=0).all():
            raise ValueError("omega_tilde_a must not contain zero columns")

    @property
    def n_systems(self) -> int:
        return self.upsilon_bar_a.shape[0]

    @property
    def separator_outputs(self) -> tuple[int, ...]:
        return tuple(i for kind, i in self.r_channels if kind == "y")


@dataclass
class TopologyDiagnostics:
    well_posed: bool
    messages: list[str] = field(default_factory=list)


def validate(topology: Topology) -> TopologyDiagnostics:
    """Check entry ranges and closed-loop well-posedness.

    Every b-polynomial carries at least one delay, so the input-to-output map
    is strictly causal and the closed-loop Schur complement is unit lower
    triangular in time, hence nonsingular: a topology with admissible entries
    is always well-posed under this model class.
    """
    for name, mat in (("upsilon", topology.upsilon), ("omega", topology.omega)):
        bad = np.setdiff1d(np.unique(mat), [-1.0, 0.0, 1.0])
        if bad.size:
            raise TopologyError(f"{name} entries must be in {{-1, 0, +1}}, found {bad.tolist()}")
    diag = TopologyDiagnostics(well_posed=True)
    diag.messages.append(
        "well-posed: unit input delays make the closed-loop map unit lower triangular"
    )
    return diag


def _adjacency(topology: Topology) -> np.ndarray:
    """Boolean adjacency over M+Q vertices; adj[f, t] for edge f -> t (0-based)."""
    m, q = topology.m, topology.q
    adj = np.zeros((m + q, m + q), dtype=bool)
    adj[:m, :m] = topology.upsilon.T != 0
    adj[m:, :m] = topology.omega.T != 0
    return adj


def has_path(topology: Topology, from_vertex: int, to_vertex: int) -> bool:
    """True iff a directed path exists from one vertex to another (1-based)."""
    total = topology.m + topology.q
    for v in (from_vertex, to_vertex):
        if not 1 <= v <= total:
            raise IndexError(f"vertex {v} outside 1..{total}")
    adj = _adjacency(topology)
    seen = np.zeros(total, dtype=bool)
    stack = [from_vertex - 1]
    while stack:
        v = stack.pop()
        for w in np.flatnonzero(adj[v]):
            if w == to_vertex - 1:
                return True
            if not seen[w]:
                seen[w] = True
                stack.append(int(w))
    return False


def check_separation(topology: Topology, partition: Partition) -> list[tuple[int, int]]:
    """Return the list of edges violating the two separation assumptions.

    A violation is any direct edge B -> A or A -> B; an empty list means the
    partition is admissible.  On success the separator property (every
    directed A-to-B path passes through C) is additionally asserted.
    """
    partition.validate_cover(topology.m)
    ups = topology.upsilon
    violations: list[tuple[int, int]] = []
    for j in partition.set_b:
        for i in partition.set_a:
            if ups[i - 1, j - 1] != 0:
                violations.append((j, i))
    for i in partition.set_a:
        for j in partition.set_b:
            if ups[j - 1, i - 1] != 0:
                violations.append((i, j))
    if not violations and partition.set_b and partition.set_c:
        # Redundant assertion: with the C systems removed, no A-to-B path remains.
        reduced = topology.upsilon.copy()
        for c in partition.set_c:
            reduced[c - 1, :] = 0
            reduced[:, c - 1] = 0
        cut = Topology(m=topology.m, q=topology.q, upsilon=reduced, omega=topology.omega)
        for i in partition.set_a:
            for j in partition.set_b:
                assert not has_path(cut, i, j), (
                    f"separator property violated: path {i}->{j} avoids C"
                )
    return violations


def detect_separator_feedback(topology: Topology, partition: Partition) -> str:
    """approximate_ml iff any direct edge runs from A into the separator C."""
    violations = check_separation(topology, partition)
    if violations:
        raise SeparationError(f"partition not separable, offending edges {violations}")
    ups = topology.upsilon
    for i in partition.set_a:
        for j in partition.set_c:
            if ups[j - 1, i - 1] != 0:
                return APPROXIMATE_ML
    return TRUE_ML


def build_equivalent_subnetwork(topology: Topology, partition: Partition) -> EquivalentSubnetwork:
    """Extract the reduced target model with augmented exogenous channels.

    Zero columns of the target's exogenous block are dropped, and each
    separator output with a nonzero coupling column becomes one additional
    known input channel, in (original exogenous, separator output) order.
    """
    violations = check_separation(topology, partition)
    if violations:
        raise SeparationError(f"partition not separable, offending edges {violations}")
    a_idx = [i - 1 for i in partition.set_a]
    c_idx = [i - 1 for i in partition.set_c]

    ups_a = topology.upsilon[np.ix_(a_idx, a_idx)]
    ups_ac = topology.upsilon[np.ix_(a_idx, c_idx)]
    omega_a = topology.omega[a_idx, :]

    r_keep = [j for j in range(topology.q) if np.any(omega_a[:, j] != 0)]
    c_keep = [k for k in range(len(c_idx)) if np.any(ups_ac[:, k] != 0)]

    omega_hat = omega_a[:, r_keep]
    ups_ac_tilde = ups_ac[:, c_keep]
    omega_tilde = np.hstack([omega_hat, ups_ac_tilde]) if (r_keep or c_keep) else np.zeros(
        (len(a_idx), 0)
    )
    channels: list[tuple[str, int]] = [("r", j + 1) for j in r_keep]
    channels += [("y", c_idx[k] + 1) for k in c_keep]

    return EquivalentSubnetwork(
        upsilon_bar_a=ups_a,
        omega_tilde_a=omega_tilde,
        r_channels=tuple(channels),
        ml_mode=detect_separator_feedback(topology, partition),
        set_a=partition.set_a,
    )
