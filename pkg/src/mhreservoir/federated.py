"""Incremental ridge regression through additive sufficient statistics.

A readout head keeps A = H^T H and B = H^T X. Both are additive over data
chunks, so a head can be updated from streaming data (or merged across
sites) without storing any raw sequences, and solving on the accumulated
statistics is exactly equivalent to batch ridge regression on all the data
seen so far.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .reservoir import solve_regularized


class HeadAccumulator:
    """Ridge-regression state for one readout head.

    Attributes:
        A: (M, M) accumulated Gram matrix, symmetric PSD.
        B: (M, d) accumulated cross term.
        W_o: (d, M) readout from the most recent solve (zeros before any).
        update_count: number of accumulate calls absorbed.
        lam: ridge regularization, fixed for the accumulator's lifetime.
    """

    def __init__(self, size: int, dim: int, lam: float):
        if size < 1 or dim < 1:
            raise ValueError("size and dim must be at least 1")
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.A = np.zeros((size, size))
        self.B = np.zeros((size, dim))
        self.W_o = np.zeros((dim, size))
        self.update_count = 0
        self.lam = float(lam)
        self._stale = False

    @property
    def size(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    def accumulate(self, H: np.ndarray, X: np.ndarray) -> None:
        """Absorb one chunk: A += H^T H, B += H^T X.

        The cached W_o goes stale until the next solve.
        """
        H = np.asarray(H, dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        if H.ndim != 2 or H.shape[1] != self.size:
            raise ValueError(f"H has shape {H.shape}, expected (n, {self.size})")
        if X.ndim != 2 or X.shape != (H.shape[0], self.dim):
            raise ValueError(f"X has shape {X.shape}, expected ({H.shape[0]}, {self.dim})")
        if not (np.isfinite(H).all() and np.isfinite(X).all()):
            raise NumericalError("non-finite values in accumulation inputs")
        self.A += H.T @ H
        self.B += H.T @ X
        self.update_count += 1
        self._stale = True

    def solve(self) -> np.ndarray:
        """Readout from the accumulated statistics: W_o = ((A + lam I)^-1 B)^T."""
        self.W_o = solve_regularized(self.A, self.B, self.lam)
        self._stale = False
        return self.W_o

    def readout(self) -> np.ndarray:
        """Cached W_o, recomputed first if accumulation made it stale."""
        if self._stale:
            self.solve()
        return self.W_o

    def copy(self) -> "HeadAccumulator":
        dup = HeadAccumulator(self.size, self.dim, self.lam)
        dup.A = self.A.copy()
        dup.B = self.B.copy()
        dup.W_o = self.W_o.copy()
        dup.update_count = self.update_count
        dup._stale = self._stale
        return dup


def new_accumulator(size: int, dim: int, lam: float) -> HeadAccumulator:
    return HeadAccumulator(size, dim, lam)


def merge_accumulators(a: HeadAccumulator, b: HeadAccumulator) -> HeadAccumulator:
    """Combine two heads' statistics by addition (federation across sites)."""
    if (a.size, a.dim) != (b.size, b.dim):
        raise ValueError(f"shape mismatch: ({a.size}, {a.dim}) vs ({b.size}, {b.dim})")
    if a.lam != b.lam:
        raise ValueError(f"lambda mismatch: {a.lam!r} vs {b.lam!r}")
    merged = HeadAccumulator(a.size, a.dim, a.lam)
    merged.A = a.A + b.A
    merged.B = a.B + b.B
    merged.update_count = a.update_count + b.update_count
    merged._stale = merged.update_count > 0
    return merged
