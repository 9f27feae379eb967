"""Problem-instance helpers: validation, total cost, precision, greedy rounding."""
from __future__ import annotations

import numpy as np

__all__ = [
    "check_cost_matrix",
    "check_assignment",
    "validate_permutation",
    "permutation_to_matrix",
    "matrix_to_permutation",
    "total_cost",
    "precision",
    "greedy_discretize",
]


def check_cost_matrix(C, name: str = "cost matrix") -> np.ndarray:
    """Return ``C`` as a square, finite float64 array or raise ``ValueError``."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"{name} must be square, got shape {C.shape}")
    if C.shape[0] < 1:
        raise ValueError(f"{name} must have size >= 1")
    if not np.all(np.isfinite(C)):
        raise ValueError(f"{name} contains non-finite values")
    return C


def validate_permutation(X) -> bool:
    """True iff ``X`` is binary with every row and column summing to one."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        return False
    if not np.all((X == 0) | (X == 1)):
        return False
    return bool(np.all(X.sum(axis=0) == 1) and np.all(X.sum(axis=1) == 1))


def check_assignment(X, n: int | None = None, name: str = "assignment") -> np.ndarray:
    X = np.asarray(X)
    if n is not None and X.shape != (n, n):
        raise ValueError(f"{name} has shape {X.shape}, expected {(n, n)}")
    if not validate_permutation(X):
        raise ValueError(f"{name} is not a permutation matrix")
    return X


def permutation_to_matrix(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    n = perm.shape[0]
    X = np.zeros((n, n), dtype=np.int8)
    X[np.arange(n), perm] = 1
    return X


def matrix_to_permutation(X) -> np.ndarray:
    """Job index assigned to each agent (row)."""
    X = check_assignment(X)
    return np.argmax(X, axis=1).astype(np.int64)


def total_cost(C, X) -> float:
    C = check_cost_matrix(C)
    X = check_assignment(X, C.shape[0])
    rows = np.arange(C.shape[0])
    # summed in row order so equal permutations give bit-equal totals
    return float(np.sum(C[rows, np.argmax(X, axis=1)]))


def precision(Y, Ygt) -> float:
    """Fraction of agents whose assigned job agrees with the reference."""
    Y = np.asarray(Y)
    Ygt = np.asarray(Ygt)
    if Y.shape != Ygt.shape:
        raise ValueError(f"size mismatch: {Y.shape} vs {Ygt.shape}")
    check_assignment(Y, name="Y")
    check_assignment(Ygt, name="Ygt")
    Y = Y.astype(np.int64)
    Ygt = Ygt.astype(np.int64)
    return float(np.trace(Y.T @ Ygt)) / float(np.trace(Ygt.T @ Ygt))


def greedy_discretize(S) -> np.ndarray:
    """Round a score matrix to a permutation by repeated global-max selection.

    Each round takes the largest entry among unused rows and columns; ties go
    to the smallest row index, then the smallest column index.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("score matrix contains non-finite values")
    n = S.shape[0]
    flat = S.ravel()
    # entries above the minimum, stable descending
    hi = np.flatnonzero(flat > flat.min())
    cand = hi[np.argsort(-flat[hi], kind="stable")]
    X = np.zeros((n, n), dtype=np.int8)
    row_free = np.ones(n, dtype=bool)
    col_free = np.ones(n, dtype=bool)
    sentinel = cand.size
    while cand.size:
        rows, cols = np.divmod(cand, n)
        # A candidate that comes first for both its row and its column cannot
        # be blocked by any earlier pick, so all of those are taken at once.
        pos = np.arange(cand.size)
        first_row = np.full(n, sentinel)
        first_col = np.full(n, sentinel)
        np.minimum.at(first_row, rows, pos)
        np.minimum.at(first_col, cols, pos)
        take = (first_row[rows] == pos) & (first_col[cols] == pos)
        X[rows[take], cols[take]] = 1
        row_free[rows[take]] = False
        col_free[cols[take]] = False
        cand = cand[row_free[rows] & col_free[cols]]
    # Every cell left with a free row and column holds the minimum; scanning
    # those in row-major order pairs free rows and free columns in order.
    X[np.flatnonzero(row_free), np.flatnonzero(col_free)] = 1
    return X
