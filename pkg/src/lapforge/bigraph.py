"""Cost matrix -> pruned agent/job bipartite graph, and edge labels -> matrix."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .core import check_assignment, check_cost_matrix

__all__ = [
    "BipartiteGraph",
    "build_graph",
    "edge_index",
    "labels_to_score_matrix",
    "ground_truth_labels",
]


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Agents are nodes ``0..n-1`` and jobs ``n..2n-1``.

    Edges are stored agent-major, ascending cost within an agent, smaller job
    index first on equal costs; an edge's position in these arrays is its
    index.
    """

    n: int
    t_effective: int
    agents: np.ndarray
    jobs: np.ndarray
    costs: np.ndarray
    _lookup: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.agents.shape[0])

    @property
    def node_count(self) -> int:
        return 2 * self.n

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(j), float(c)) for a, j, c in zip(self.agents, self.jobs, self.costs)]

    @cached_property
    def agent_adjacency(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.agents == a) for a in range(self.n)]

    @cached_property
    def job_adjacency(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.jobs == j) for j in range(self.n)]

    # --- sparse operators used by message passing -------------------------

    @cached_property
    def pair_self(self) -> np.ndarray:
        """Receiving node of every directed (node, neighbor) pair.

        The first ``E`` pairs have agents receiving from jobs, the next ``E``
        jobs receiving from agents; pair ``k`` and ``k + E`` share edge ``k``.
        """
        return np.concatenate([self.agents, self.jobs + self.n])

    @cached_property
    def pair_neighbor(self) -> np.ndarray:
        return np.concatenate([self.jobs + self.n, self.agents])

    @cached_property
    def pair_edge(self) -> np.ndarray:
        E = self.num_edges
        return np.concatenate([np.arange(E), np.arange(E)])

    def _selector(self, index: np.ndarray, ncols: int) -> sp.csr_matrix:
        rows = np.arange(index.shape[0])
        return sp.csr_matrix((np.ones(index.shape[0]), (rows, index)), shape=(index.shape[0], ncols))

    @cached_property
    def gather_agent(self) -> sp.csr_matrix:
        """(E, 2n) selector picking each edge's agent node."""
        return self._selector(self.agents, 2 * self.n)

    @cached_property
    def gather_job(self) -> sp.csr_matrix:
        return self._selector(self.jobs + self.n, 2 * self.n)

    @cached_property
    def gather_pair_self(self) -> sp.csr_matrix:
        return self._selector(self.pair_self, 2 * self.n)

    @cached_property
    def gather_pair_neighbor(self) -> sp.csr_matrix:
        return self._selector(self.pair_neighbor, 2 * self.n)

    @cached_property
    def gather_pair_edge(self) -> sp.csr_matrix:
        return self._selector(self.pair_edge, self.num_edges)

    @cached_property
    def node_degree(self) -> np.ndarray:
        return np.bincount(self.pair_self, minlength=2 * self.n)

    @cached_property
    def mean_over_pairs(self) -> sp.csr_matrix:
        """(2n, 2E) operator averaging pair messages per receiving node.

        Agents always have ``t_effective`` neighbors, but a job can lose every
        edge to pruning; its row is empty, so its aggregate is zero.
        """
        deg = self.node_degree
        P = self.pair_self.shape[0]
        return sp.csr_matrix(
            (1.0 / deg[self.pair_self], (self.pair_self, np.arange(P))),
            shape=(2 * self.n, P),
        )

    @cached_property
    def job_degree(self) -> np.ndarray:
        return np.bincount(self.jobs, minlength=self.n)

    @cached_property
    def side_mean_operators(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """(n, E) operators averaging edge rows per agent and per job.

        A job that lost every edge gets an empty row, hence a zero mean.
        """
        E, n = self.num_edges, self.n
        cols = np.arange(E)
        per_agent = sp.csr_matrix((np.full(E, 1.0 / self.t_effective), (self.agents, cols)), shape=(n, E))
        per_job = sp.csr_matrix((1.0 / self.job_degree[self.jobs], (self.jobs, cols)), shape=(n, E))
        return per_agent, per_job

    def job_mean(self, x: np.ndarray) -> np.ndarray:
        """Average rows of the (E, k) array ``x`` per job; zero for isolated jobs."""
        return self.side_mean_operators[1] @ x

    @cached_property
    def scatter_matrix(self) -> sp.csr_matrix:
        """(n*n, E) operator placing edge values at their row-major cell."""
        cells = self.agents * self.n + self.jobs
        E = self.num_edges
        return sp.csr_matrix((np.ones(E), (cells, np.arange(E))), shape=(self.n * self.n, E))


def _row_smallest(C: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` smallest entries per row, in stable sorted order.

    Equal to ``argsort(C, kind="stable")[:, :k]`` without sorting whole rows.
    """
    n = C.shape[0]
    if k == n:
        return np.argsort(C, axis=1, kind="stable")
    kth = np.sort(C, axis=1)[:, k - 1 : k]
    mask = C <= kth
    counts = mask.sum(axis=1)
    out = np.empty((n, k), dtype=np.int64)
    clean = counts == k
    if clean.all():
        cols = np.nonzero(mask)[1].reshape(n, k)
    else:
        cols = np.nonzero(mask[clean])[1].reshape(-1, k)
    # ascending column order from nonzero plus a stable sort keeps index tie-breaks
    rows_clean = np.flatnonzero(clean)
    vals = C[rows_clean[:, None], cols]
    out[rows_clean] = np.take_along_axis(cols, np.argsort(vals, axis=1, kind="stable"), axis=1)
    tied = np.flatnonzero(~clean)
    if tied.size:
        out[tied] = np.argsort(C[tied], axis=1, kind="stable")[:, :k]
    return out


def build_graph(C, t: int = 8) -> BipartiteGraph:
    """Keep, for every agent, the ``min(t, n)`` cheapest incident edges."""
    C = check_cost_matrix(C)
    if t < 1:
        raise ValueError("t must be >= 1")
    n = C.shape[0]
    t_eff = min(int(t), n)
    order = _row_smallest(C, t_eff)
    agents = np.repeat(np.arange(n, dtype=np.int64), t_eff)
    jobs = order.reshape(-1).astype(np.int64)
    costs = C[agents, jobs]
    lookup = np.full((n, n), -1, dtype=np.int64)
    lookup[agents, jobs] = np.arange(agents.shape[0])
    for arr in (agents, jobs, costs, lookup):
        arr.setflags(write=False)
    return BipartiteGraph(n=n, t_effective=t_eff, agents=agents, jobs=jobs, costs=costs, _lookup=lookup)


def edge_index(g: BipartiteGraph, agent: int, job: int) -> int | None:
    """Position of edge (agent, job) in edge order, or ``None`` if pruned."""
    if not (0 <= agent < g.n and 0 <= job < g.n):
        raise IndexError(f"indices ({agent}, {job}) out of range for n={g.n}")
    k = int(g._lookup[agent, job])
    return None if k < 0 else k


def labels_to_score_matrix(g: BipartiteGraph, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (g.num_edges,):
        raise ValueError(f"expected {g.num_edges} edge labels, got shape {y.shape}")
    Y = np.zeros((g.n, g.n))
    Y[g.agents, g.jobs] = y
    return Y


def ground_truth_labels(g: BipartiteGraph, Xgt) -> tuple[np.ndarray, float]:
    """Binary label per retained edge and the fraction of optimal pairs kept."""
    Xgt = check_assignment(Xgt, g.n, name="ground truth")
    labels = Xgt[g.agents, g.jobs].astype(np.float64)
    return labels, float(labels.sum()) / g.n
