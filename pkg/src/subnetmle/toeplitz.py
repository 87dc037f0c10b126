"""Implicit banded lower-triangular Toeplitz operators.

These operators represent causal filtering over a finite horizon with zero
pre-history: applying one is a truncated convolution, solving against a monic
one is forward substitution.  Only the band is stored; dense realizations
exist solely in test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import DimensionError, SingularOperatorError
from .validation import as_vector, readonly

MONIC = "monic"
STRICTLY_DELAYED = "strictly-delayed"


@dataclass(frozen=True)
class BandedLowerToeplitz:
    """Lower-triangular Toeplitz operator defined by its first column.

    kind "monic": first column is (1, band, 0, ...).
    kind "strictly-delayed": first column is (0, band, 0, ...), i.e. the band
    holds the coefficients starting at lag 1.
    """

    kind: str
    band: np.ndarray
    n: int

    def __post_init__(self):
        if self.kind not in (MONIC, STRICTLY_DELAYED):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.n < 1:
            raise DimensionError("operator dimension must be positive")
        band = readonly(as_vector(self.band, "band"))
        if band.shape[0] > self.n - 1:
            raise DimensionError(
                f"band of length {band.shape[0]} does not fit below the "
                f"diagonal of an operator of dimension {self.n}"
            )
        object.__setattr__(self, "band", band)

    @property
    def first_column(self) -> np.ndarray:
        col = np.zeros(self.n)
        col[0] = 1.0 if self.kind == MONIC else 0.0
        col[1 : 1 + self.band.shape[0]] = self.band
        return col

    def apply(self, v) -> np.ndarray:
        return apply(self, v)

    def solve(self, w) -> np.ndarray:
        return solve_unit_lower(self, w)


def from_polynomial(kind: str, coeffs, n: int) -> BandedLowerToeplitz:
    """Build the operator whose first column is the stated polynomial column."""
    return BandedLowerToeplitz(kind=kind, band=np.asarray(coeffs, dtype=float), n=n)


def apply(T: BandedLowerToeplitz, v) -> np.ndarray:
    """w = T v as a causal convolution, O(n * band)."""
    v = as_vector(v, "v", length=T.n)
    lead = 1.0 if T.kind == MONIC else 0.0
    if T.band.shape[0] == 0:
        return lead * v
    return np.convolve(np.concatenate(([lead], T.band)), v)[: T.n]


def apply_transpose(T: BandedLowerToeplitz, v) -> np.ndarray:
    """w = T^T v (anticausal correlation with the band)."""
    v = as_vector(v, "v", length=T.n)
    lead = 1.0 if T.kind == MONIC else 0.0
    if T.band.shape[0] == 0:
        return lead * v
    return np.convolve(np.concatenate(([lead], T.band)), v[::-1])[: T.n][::-1]


def solve_unit_lower(T: BandedLowerToeplitz, w) -> np.ndarray:
    """Return v with T v = w by forward substitution; requires a monic kind."""
    if T.kind != MONIC:
        raise SingularOperatorError(
            "cannot solve against a strictly-delayed operator (zero diagonal)"
        )
    w = as_vector(w, "w", length=T.n)
    if T.band.shape[0] == 0:
        return w.copy()
    return lfilter([1.0], np.concatenate(([1.0], T.band)), w)


def solve_unit_lower_transpose(T: BandedLowerToeplitz, w) -> np.ndarray:
    """Return v with T^T v = w.

    Uses the flip identity J T^T J = T for Toeplitz matrices, so the transposed
    solve is a forward solve on the reversed right-hand side.
    """
    if T.kind != MONIC:
        raise SingularOperatorError(
            "cannot solve against a strictly-delayed operator (zero diagonal)"
        )
    w = as_vector(w, "w", length=T.n)
    return solve_unit_lower(T, w[::-1])[::-1]
