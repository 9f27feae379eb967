"""Exact assignment solvers and the Sinkhorn normalization baseline."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import check_cost_matrix, permutation_to_matrix

__all__ = [
    "SinkhornConfig",
    "DegenerateInstanceError",
    "hungarian",
    "hungarian_permutation",
    "brute_force",
    "sinkhorn",
    "sinkhorn_kernel",
    "BRUTE_FORCE_MAX_N",
]

BRUTE_FORCE_MAX_N = 9


class DegenerateInstanceError(ArithmeticError):
    """Raised when Sinkhorn scaling meets an all-zero row or column."""


@dataclass(frozen=True)
class SinkhornConfig:
    """Settings for :func:`sinkhorn`.

    ``kernel`` picks how costs become positive affinities before scaling:
    ``"linear"`` uses ``rowmax(C) - C`` and ignores ``temperature``;
    ``"exp"`` uses ``exp(-C / temperature)``.
    """

    temperature: float = 0.1
    max_iterations: int = 100
    tolerance: float = 1e-6
    kernel: str = "linear"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.kernel not in ("linear", "exp"):
            raise ValueError(f"unknown kernel {self.kernel!r}")


def hungarian_permutation(C) -> np.ndarray:
    """Minimum-cost assignment by shortest augmenting paths, O(n^3).

    Rows are inserted one at a time; each insertion grows a Dijkstra-like
    search over reduced costs ``C[i, j] - u[i] - v[j]`` until it reaches a
    free column, then flips the alternating path.  Returns the job index of
    each agent.
    """
    C = check_cost_matrix(C)
    n = C.shape[0]
    # index 0 is a virtual column/row used as the search root
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cols = np.flatnonzero(free)
            cur = C[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            used_cols = np.flatnonzero(used)
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[cols] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[p[1:] - 1] = np.arange(n)
    return perm


def hungarian(C) -> np.ndarray:
    """Optimal assignment matrix for ``C`` (minimization)."""
    return permutation_to_matrix(hungarian_permutation(C))


def brute_force(C) -> np.ndarray:
    """Exhaustive search over all n! permutations; lexicographically first minimizer."""
    C = check_cost_matrix(C)
    n = C.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    costs = C[np.arange(n), perms].sum(axis=1)
    return permutation_to_matrix(perms[int(np.argmin(costs))])


def sinkhorn_kernel(C, cfg: SinkhornConfig) -> np.ndarray:
    C = check_cost_matrix(C)
    if cfg.kernel == "exp":
        # row shift cancels under row normalization and keeps each row max at 1
        return np.exp(-(C - C.min(axis=1, keepdims=True)) / cfg.temperature)
    rowmax = C.max(axis=1, keepdims=True)
    span = float((rowmax - C.min(axis=1, keepdims=True)).max())
    # tiny floor keeps rows/columns of row-maxima from being all zero
    floor = 1e-12 * span if span > 0 else 1.0
    return rowmax - C + floor


def sinkhorn(C, cfg: SinkhornConfig | None = None) -> np.ndarray:
    """Approximately doubly stochastic matrix from alternating row/column scaling.

    Stops once every row sum is within ``cfg.tolerance`` of one (columns sum
    to one after each sweep) or after ``cfg.max_iterations`` sweeps.
    """
    cfg = cfg or SinkhornConfig()
    K = sinkhorn_kernel(C, cfg)
    if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
        raise DegenerateInstanceError("kernel has an all-zero row or column")
    P = K
    for _ in range(cfg.max_iterations):
        rs = P.sum(axis=1, keepdims=True)
        if np.any(rs == 0):
            raise DegenerateInstanceError("all-zero row during Sinkhorn scaling")
        P = P / rs
        cs = P.sum(axis=0, keepdims=True)
        if np.any(cs == 0):
            raise DegenerateInstanceError("all-zero column during Sinkhorn scaling")
        P = P / cs
        if np.max(np.abs(P.sum(axis=1) - 1.0)) <= cfg.tolerance:
            break
    return P
