"""Graph network that labels the edges of a pruned assignment graph.

Pipeline per cost matrix: build the top-t bipartite graph, embed each edge
cost, run ``conv_iterations`` rounds of edge convolution followed by node
convolution (both gated by channel attention, node aggregation additionally
weighted per neighbor), then decode each edge to a score in (0, 1).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Perceptron, Tensor
from .bigraph import BipartiteGraph, build_graph

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "LatentGraphState",
    "AttentionContext",
    "encode",
    "channel_attention",
    "edge_conv",
    "node_conv",
    "decode",
    "forward",
    "forward_graph",
    "edge_inputs",
    "infer_graph",
]

COST_SCALINGS = ("none", "max", "retained_mean")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 16
    conv_iterations: int = 5
    t: int = 8
    hidden_width: int = 32
    ablate_channel_attention: bool = False
    ablate_aggregation_weights: bool = False
    cost_scaling: str = "retained_mean"

    def __post_init__(self):
        for name in ("latent_dim", "conv_iterations", "t", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cost_scaling not in COST_SCALINGS:
            raise ValueError(f"cost_scaling must be one of {COST_SCALINGS}")

    def to_dict(self) -> dict:
        return asdict(self)


# name -> (layer sizes as multiples of (latent, hidden, literal), activations)
def _layouts(cfg: ModelConfig) -> dict[str, tuple[list[int], list[str]]]:
    D, H = cfg.latent_dim, cfg.hidden_width
    return {
        "encoder": ([1, H, D], ["relu", "identity"]),
        "rho_e": ([3 * D, H, D], ["relu", "identity"]),
        "rho1_v": ([2 * D, H, D], ["relu", "identity"]),
        "rho2_v": ([2 * D, H, D], ["relu", "identity"]),
        "kappa_v": ([3 * D, H, D], ["relu", "sigmoid"]),
        "kappa_e": ([3 * D, H, D], ["relu", "sigmoid"]),
        "tau": ([2 * D, D, 1], ["relu", "sigmoid"]),
        "decoder": ([D, H, 1], ["relu", "sigmoid"]),
    }


class ModelParameters:
    """The eight perceptrons of the network, addressable by name."""

    NAMES = ("encoder", "rho_e", "rho1_v", "rho2_v", "kappa_v", "kappa_e", "tau", "decoder")

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.config = cfg
        rng = np.random.default_rng(seed)
        self.modules: dict[str, Perceptron] = {}
        for name, (sizes, acts) in _layouts(cfg).items():
            self.modules[name] = Perceptron(sizes, acts, rng=rng)

    def __getattr__(self, name: str) -> Perceptron:
        modules = self.__dict__.get("modules")
        if modules is not None and name in modules:
            return modules[name]
        raise AttributeError(name)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name in self.NAMES:
            for pname, tensor in self.modules[name].parameters():
                out.append((f"{name}.{pname}", tensor))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {tensor.shape}")
            tensor.data = value.copy()

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.grad = None

    def num_parameters(self) -> int:
        return int(sum(t.data.size for _, t in self.named_parameters()))


class LatentGraphState(NamedTuple):
    nodes: Tensor  # (2n, D)
    edges: Tensor  # (E, D)


class AttentionContext(NamedTuple):
    c_v: Tensor  # (1, D)
    c_e: Tensor  # (1, D)
    omega: Tensor | None = None  # (2E, 1), filled in by node_conv


def edge_inputs(g: BipartiteGraph, cfg: ModelConfig) -> np.ndarray:
    """Per-edge scalar fed to the encoder, shape (E, 1)."""
    costs = g.costs
    if cfg.cost_scaling == "max":
        ref = float(np.max(np.abs(costs)))
    elif cfg.cost_scaling == "retained_mean":
        ref = float(np.mean(np.abs(costs)))
    else:
        ref = 1.0
    if ref == 0.0:
        ref = 1.0
    return (costs / ref).reshape(-1, 1)


def encode(g: BipartiteGraph, p: ModelParameters) -> LatentGraphState:
    cfg = p.config
    edges = p.encoder(Tensor(edge_inputs(g, cfg)))
    nodes = Tensor(np.zeros((g.node_count, cfg.latent_dim)))
    return LatentGraphState(nodes, edges)


def _pool(x: Tensor) -> Tensor:
    stats = ad.concat([ad.max_reduce(x, 0), ad.min_reduce(x, 0), ad.mean(x, 0)])
    return ad.reshape(stats, (1, -1))


def channel_attention(state: LatentGraphState, p: ModelParameters) -> AttentionContext:
    D = p.config.latent_dim
    if p.config.ablate_channel_attention:
        ones = Tensor(np.ones((1, D)))
        return AttentionContext(ones, ones)
    c_v = p.kappa_v(_pool(state.nodes))
    c_e = p.kappa_e(_pool(state.edges))
    return AttentionContext(c_v, c_e)


def edge_conv(g: BipartiteGraph, state: LatentGraphState, ctx: AttentionContext, p: ModelParameters) -> Tensor:
    gated_nodes = ad.mul(state.nodes, ctx.c_v)
    src = ad.sparse_matmul(g.gather_agent, gated_nodes)
    dst = ad.sparse_matmul(g.gather_job, gated_nodes)
    return p.rho_e(ad.concat([src, dst, ad.mul(state.edges, ctx.c_e)]))


def aggregation_weights(g: BipartiteGraph, nodes: Tensor, p: ModelParameters) -> Tensor:
    v_i = ad.sparse_matmul(g.gather_pair_self, nodes)
    v_j = ad.sparse_matmul(g.gather_pair_neighbor, nodes)
    return p.tau(ad.concat([v_i, v_j]))


def node_conv(
    g: BipartiteGraph,
    state: LatentGraphState,
    ctx: AttentionContext,
    p: ModelParameters,
    return_weights: bool = False,
):
    nodes, edges = state
    neighbor = ad.sparse_matmul(g.gather_pair_neighbor, ad.mul(nodes, ctx.c_v))
    omega = None
    if not p.config.ablate_aggregation_weights:
        omega = aggregation_weights(g, nodes, p)
        neighbor = ad.mul(omega, neighbor)
    incident = ad.sparse_matmul(g.gather_pair_edge, ad.mul(edges, ctx.c_e))
    messages = p.rho1_v(ad.concat([incident, neighbor]))
    pooled = ad.sparse_matmul(g.mean_over_pairs, messages)
    updated = p.rho2_v(ad.concat([pooled, nodes]))
    if return_weights:
        return updated, omega
    return updated


def decode(state: LatentGraphState, p: ModelParameters) -> Tensor:
    y = p.decoder(state.edges)
    return ad.reshape(y, (-1,))


def forward_graph(g: BipartiteGraph, p: ModelParameters) -> tuple[Tensor, Tensor]:
    """Edge labels (E,) and the dense score matrix (n, n) for a prebuilt graph."""
    state = encode(g, p)
    for _ in range(p.config.conv_iterations):
        ctx = channel_attention(state, p)
        edges = edge_conv(g, state, ctx, p)
        state = LatentGraphState(state.nodes, edges)
        nodes = node_conv(g, state, ctx, p)
        state = LatentGraphState(nodes, edges)
    y = decode(state, p)
    Y = ad.reshape(ad.sparse_matmul(g.scatter_matrix, ad.reshape(y, (-1, 1))), (g.n, g.n))
    return y, Y


# --- inference without the tape --------------------------------------------
#
# Same arithmetic as ``forward_graph``, rearranged for speed: attention gates
# are folded into the weight matrices they multiply, first layers fed by a
# concatenation are split per block so node-level blocks are projected once
# per node, and the linear tail of rho1_v is moved after the mean (linear
# maps commute with averaging) and fused with the first layer of rho2_v.


def _act(h: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(h, 0.0, out=h)
    if act == "sigmoid":
        # overflow-free form of 1 / (1 + exp(-h))
        np.multiply(h, 0.5, out=h)
        np.tanh(h, out=h)
        h += 1.0
        h *= 0.5
    return h


def _mlp(m: Perceptron, h: np.ndarray) -> np.ndarray:
    for w, b, act in zip(m.weights, m.biases, m.activations):
        h = h @ w.data
        h += b.data
        h = _act(h, act)
    return h


def _blocks(m: Perceptron, widths: list[int]) -> list[np.ndarray]:
    return np.split(m.weights[0].data, np.cumsum(widths)[:-1], axis=0)


def _pool_np(x: np.ndarray) -> np.ndarray:
    mean = np.ones(x.shape[0]) @ x / x.shape[0]
    return np.concatenate([x.max(axis=0), x.min(axis=0), mean])[None, :]


def infer_graph(g: BipartiteGraph, p: ModelParameters) -> np.ndarray:
    """Edge labels (E,) for a prebuilt graph, computed with plain arrays."""
    cfg = p.config
    D = cfg.latent_dim
    n, E, t = g.n, g.num_edges, g.t_effective
    jobs = g.jobs
    use_omega = not cfg.ablate_aggregation_weights

    rho_a, rho_b, rho_c = _blocks(p.rho_e, [D, D, D])
    rho_b1, rho_W2, rho_b2 = p.rho_e.biases[0].data, p.rho_e.weights[1].data, p.rho_e.biases[1].data
    r1_e, r1_v = _blocks(p.rho1_v, [D, D])
    r1_b1, r1_W2, r1_b2 = p.rho1_v.biases[0].data, p.rho1_v.weights[1].data, p.rho1_v.biases[1].data
    r2_p, r2_v = _blocks(p.rho2_v, [D, D])
    # rho1 tail followed by rho2's pooled block is a single affine map
    fused_W = r1_W2 @ r2_p
    fused_b = r1_b2 @ r2_p + p.rho2_v.biases[0].data
    r2_W2, r2_b2 = p.rho2_v.weights[1].data, p.rho2_v.biases[1].data
    if use_omega:
        tau_i, tau_j = _blocks(p.tau, [D, D])
        tau_b1, tau_W2, tau_b2 = p.tau.biases[0].data, p.tau.weights[1].data, p.tau.biases[1].data
    isolated = (g.job_degree == 0)[:, None]
    per_agent, per_job = g.side_mean_operators

    edges = _mlp(p.encoder, edge_inputs(g, cfg))
    nodes = np.zeros((2 * n, D))
    ones = np.ones(D)
    for _ in range(cfg.conv_iterations):
        if cfg.ablate_channel_attention:
            c_v = c_e = ones
        else:
            c_v = _mlp(p.kappa_v, _pool_np(nodes))[0]
            c_e = _mlp(p.kappa_e, _pool_np(edges))[0]
        cv_col, ce_col = c_v[:, None], c_e[:, None]

        node_a, node_j = nodes[:n], nodes[n:]

        # edge convolution; rows of an agent's edges are contiguous
        h = edges @ (ce_col * rho_c)
        h += np.take(node_j @ (cv_col * rho_b), jobs, axis=0)
        h.reshape(n, t, -1)[...] += (node_a @ (cv_col * rho_a) + rho_b1)[:, None, :]
        h = _act(h, "relu") @ rho_W2
        h += rho_b2
        edges = h

        # node convolution from the new edges and the pre-update nodes;
        # first half: agents hearing from jobs, second half: jobs from agents
        r1v = cv_col * r1_v
        inc = edges @ (ce_col * r1_e)
        inc += r1_b1
        to_agent = np.take(node_j @ r1v, jobs, axis=0)
        from_agent = (node_a @ r1v)[:, None, :]
        if use_omega:
            z_a = np.take(node_j @ tau_j, jobs, axis=0)
            z_a.reshape(n, t, -1)[...] += (node_a @ tau_i + tau_b1)[:, None, :]
            z_j = np.take(node_j @ tau_i + tau_b1, jobs, axis=0)
            z_j.reshape(n, t, -1)[...] += (node_a @ tau_j)[:, None, :]
            w_a = _act(_act(z_a, "relu") @ tau_W2 + tau_b2, "sigmoid")
            w_j = _act(_act(z_j, "relu") @ tau_W2 + tau_b2, "sigmoid")
            to_agent *= w_a
            to_job = (from_agent * w_j.reshape(n, t, 1)).reshape(E, -1)
        else:
            to_job = (inc.reshape(n, t, -1) + from_agent).reshape(E, -1)
        to_agent += inc
        if use_omega:
            to_job += inc
        _act(to_agent, "relu")
        _act(to_job, "relu")
        pooled = np.concatenate([per_agent @ to_agent, per_job @ to_job])
        z = pooled @ fused_W
        z += fused_b
        # a job node without neighbors has a zero aggregate, not rho1(0)
        z[n:] -= isolated * (r1_b2 @ r2_p)
        z += nodes @ r2_v
        nodes = _act(z, "relu") @ r2_W2
        nodes += r2_b2
    return _mlp(p.decoder, edges).reshape(-1)


def forward(C, p: ModelParameters) -> tuple[np.ndarray, np.ndarray]:
    """Inference: edge labels and score matrix as plain arrays."""
    g = build_graph(C, p.config.t)
    y = infer_graph(g, p)
    Y = np.zeros((g.n, g.n))
    Y[g.agents, g.jobs] = y
    return y, Y
