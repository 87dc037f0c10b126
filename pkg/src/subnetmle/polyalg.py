"""Lag-polynomial algebra for closed-loop transfer fractions.

Polynomials live in the delay operator: an array p represents
p[0] + p[1] q + p[2] q^2 + ... with q the one-sample delay.  The closed loop
of an interconnected ARMAX block is the polynomial matrix
``Ahat = diag(A_i) - diag(B_i) @ coupling`` and every closed-loop transfer
function is a cofactor of Ahat over det(Ahat).
"""

from __future__ import annotations

from itertools import permutations

import numpy as np


def pconv(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Product of two lag polynomials."""
    if len(p) == 0 or len(q) == 0:
        return np.zeros(0)
    return np.convolve(p, q)


def padd(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = max(len(p), len(q))
    out = np.zeros(n)
    out[: len(p)] += p
    out[: len(q)] += q
    return out


def ptrim(p: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Drop trailing coefficients with magnitude <= tol."""
    nz = np.flatnonzero(np.abs(p) > tol)
    if nz.size == 0:
        return np.zeros(1)
    return np.asarray(p[: nz[-1] + 1])


def _perm_sign(perm: tuple[int, ...]) -> int:
    sgn = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, ln = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            ln += 1
        if ln % 2 == 0:
            sgn = -sgn
    return sgn


PolyMatrix = list  # list of lists of coefficient arrays


def poly_det(mat: PolyMatrix) -> np.ndarray:
    """Determinant of a polynomial matrix by permutation expansion.

    Intended for the small target sub-network dimensions (the cost grows as
    the factorial of the matrix size).
    """
    n = len(mat)
    if n == 0:
        return np.array([1.0])
    acc = np.zeros(1)
    for perm in permutations(range(n)):
        term = np.array([float(_perm_sign(perm))])
        for i in range(n):
            entry = mat[i][perm[i]]
            if len(entry) == 0 or not np.any(entry):
                term = np.zeros(0)
                break
            term = pconv(term, entry)
        if len(term):
            acc = padd(acc, term)
    return acc


def poly_minor(mat: PolyMatrix, row: int, col: int) -> PolyMatrix:
    return [
        [mat[i][j] for j in range(len(mat)) if j != col]
        for i in range(len(mat))
        if i != row
    ]


def poly_cofactor(mat: PolyMatrix, row: int, col: int) -> np.ndarray:
    if len(mat) == 1:
        return np.array([1.0])
    sgn = 1.0 if (row + col) % 2 == 0 else -1.0
    return sgn * poly_det(poly_minor(mat, row, col))


def poly_adjugate(mat: PolyMatrix) -> PolyMatrix:
    """adj with mat @ adj = det * I; adj[i][j] is the (j, i) cofactor."""
    n = len(mat)
    return [[poly_cofactor(mat, j, i) for j in range(n)] for i in range(n)]


def closed_loop_matrix(systems, coupling: np.ndarray) -> PolyMatrix:
    """Ahat = diag(1 + a_i q + ...) - diag(b_i q + ...) * coupling."""
    n = len(systems)
    apolys = [np.concatenate(([1.0], s.a)) for s in systems]
    bpolys = [np.concatenate(([0.0], s.b)) for s in systems]
    mat: PolyMatrix = []
    for i in range(n):
        row = []
        for j in range(n):
            entry = apolys[i] if i == j else np.zeros(1)
            if coupling[i, j] != 0:
                entry = padd(entry, -coupling[i, j] * bpolys[i])
            row.append(entry)
        mat.append(row)
    return mat


def companion_matrix(systems, coupling: np.ndarray) -> np.ndarray:
    """Block companion form of the deterministic interconnected recursion.

    The y-recursion with inputs substituted is
    y_k = sum_j F_j y_{k-j} with F_j[i, :] = -a^i_j e_i^T + b^i_j coupling[i, :].
    """
    m = len(systems)
    depth = max([1] + [max(s.a.shape[0], s.b.shape[0]) for s in systems])
    blocks = [np.zeros((m, m)) for _ in range(depth)]
    for i, s in enumerate(systems):
        for j, aj in enumerate(s.a, start=1):
            blocks[j - 1][i, i] -= aj
        for j, bj in enumerate(s.b, start=1):
            blocks[j - 1][i, :] += bj * coupling[i, :]
    comp = np.zeros((m * depth, m * depth))
    for j, blk in enumerate(blocks):
        comp[:m, j * m : (j + 1) * m] = blk
    if depth > 1:
        comp[m:, : m * (depth - 1)] = np.eye(m * (depth - 1))
    return comp


def spectral_radius(systems, coupling: np.ndarray) -> float:
    comp = companion_matrix(systems, coupling)
    if comp.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def lag_roots(coeffs_with_lead: np.ndarray) -> np.ndarray:
    """Roots (in z) of z^n + p[1] z^{n-1} + ... for a monic lag polynomial p."""
    p = ptrim(np.asarray(coeffs_with_lead, dtype=float))
    if p.shape[0] <= 1:
        return np.zeros(0)
    return np.roots(p)
