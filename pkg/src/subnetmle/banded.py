"""Banded symmetric positive-definite helpers.

The marginal likelihood reduces to a Gram matrix with small bandwidth; this
module provides its Cholesky factorization, solves, and the central band of
its inverse via a block-tridiagonal Takahashi recurrence.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


def upper_banded_storage(K: sp.spmatrix, bw: int) -> np.ndarray:
    """Upper banded storage ab[u + i - j, j] = K[i, j] for cholesky_banded."""
    n = K.shape[0]
    ab = np.zeros((bw + 1, n))
    for d in range(bw + 1):
        diag = K.diagonal(d)
        ab[bw - d, d:] = diag
    return ab


def block_selected_inverse(K: sp.spmatrix, bs: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and first-subdiagonal blocks of K^{-1} for banded SPD K.

    ``bs`` must be at least the scalar bandwidth of K; every inverse entry
    with |i - j| <= bs is then covered by the returned blocks.  Returns
    (sig_diag, sig_sub) with sig_diag[m] = inv(K)[m-block, m-block] and
    sig_sub[m] = inv(K)[(m+1)-block, m-block], on an identity-padded grid of
    ceil(n / bs) blocks.
    """
    n = K.shape[0]
    nb = -(-n // bs)
    npad = nb * bs
    Kc = sp.csr_matrix(K)
    if npad != n:
        Kc = sp.block_diag([Kc, sp.identity(npad - n)]).tocsr()
    kd = np.zeros((nb, bs, bs))
    ks = np.zeros((max(nb - 1, 0), bs, bs))
    for m in range(nb):
        sl = slice(m * bs, (m + 1) * bs)
        kd[m] = Kc[sl, sl].toarray()
        if m + 1 < nb:
            ks[m] = Kc[(m + 1) * bs : (m + 2) * bs, sl].toarray()
    # block LDL^T sweep
    dblocks = np.zeros_like(kd)
    lblocks = np.zeros_like(ks)
    dblocks[0] = kd[0]
    for m in range(nb - 1):
        lblocks[m] = np.linalg.solve(dblocks[m].T, ks[m].T).T
        dblocks[m + 1] = kd[m + 1] - lblocks[m] @ ks[m].T
    # backward Takahashi recurrence on the block tridiagonal pattern
    sig_d = np.zeros_like(kd)
    sig_s = np.zeros_like(ks)
    sig_d[nb - 1] = np.linalg.inv(dblocks[nb - 1])
    for m in range(nb - 2, -1, -1):
        sig_s[m] = -sig_d[m + 1] @ lblocks[m]
        sig_d[m] = np.linalg.inv(dblocks[m]) - sig_s[m].T @ lblocks[m]
    return sig_d, sig_s


def inverse_band_diagonals(sig_d: np.ndarray, sig_s: np.ndarray, n: int) -> dict[int, np.ndarray]:
    """Scalar diagonals kd[delta][t] = inv(K)[t + delta, t] for 0 <= delta <= bs.

    Entries beyond the original dimension n (identity padding) are zeroed.
    """
    nb, bs, _ = sig_d.shape
    npad = nb * bs
    out: dict[int, np.ndarray] = {}
    for delta in range(bs + 1):
        kd = np.zeros(npad)
        view = kd.reshape(nb, bs)
        if delta < bs:
            main = np.diagonal(sig_d, offset=-delta, axis1=1, axis2=2)
            view[:, : bs - delta] = main
        if delta >= 1 and nb > 1:
            straddle = np.diagonal(sig_s, offset=bs - delta, axis1=1, axis2=2)
            view[:-1, bs - delta :] = straddle
        valid = max(0, min(npad, n) - delta)
        kd[valid:] = 0.0
        out[delta] = kd[:n] if npad >= n else kd
    return out


def cholesky_banded_spd(ab: np.ndarray):
    """Upper-banded Cholesky; raises numpy.linalg.LinAlgError if not SPD."""
    try:
        return sla.cholesky_banded(ab, lower=False)
    except sla.LinAlgError as exc:  # scipy raises its own subclass
        raise np.linalg.LinAlgError(str(exc)) from exc


def solve_banded_cholesky(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return sla.cho_solve_banded((factor, False), rhs)
