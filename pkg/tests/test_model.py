import numpy as np
import pytest

from lapforge.autodiff import Tape, Tensor
from lapforge.bigraph import build_graph, ground_truth_labels
from lapforge.losses import LossConfig, combined_loss
from lapforge.model import (
    AttentionContext,
    LatentGraphState,
    ModelConfig,
    ModelParameters,
    channel_attention,
    decode,
    edge_conv,
    encode,
    forward,
    forward_graph,
    infer_graph,
    node_conv,
)
from lapforge.solvers import hungarian

from oracles import finite_difference_gradients

SMALL = dict(latent_dim=4, hidden_width=6)


def np_mlp(m, x):
    for W, b, act in zip(m.weights, m.biases, m.activations):
        x = x @ W.data + b.data
        if act == "relu":
            x = np.maximum(x, 0)
        elif act == "sigmoid":
            x = 1 / (1 + np.exp(-x))
    return x


def sharpen(p, factor=1.6, seed=0):
    """Scale weights and add random biases so activations leave the near-linear regime."""
    rng = np.random.default_rng(seed)
    for m in p.modules.values():
        for W, b in zip(m.weights, m.biases):
            W.data = W.data * factor
            b.data = rng.normal(scale=0.3, size=b.shape)
    return p


def flat_grad(p):
    # modules switched off by an ablation never receive a gradient
    return np.concatenate([(np.zeros(t.data.size) if t.grad is None else t.grad.ravel()) for _, t in p.named_parameters()])


def random_state(g, D, rng):
    return LatentGraphState(Tensor(rng.normal(size=(2 * g.n, D))), Tensor(rng.normal(size=(g.num_edges, D))))


def test_parameter_count_independent_of_iterations():
    a = ModelParameters(ModelConfig(conv_iterations=1))
    b = ModelParameters(ModelConfig(conv_iterations=5))
    assert a.num_parameters() == b.num_parameters() == 11170


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(latent_dim=0)
    with pytest.raises(ValueError):
        ModelConfig(cost_scaling="log")


class TestEncode:
    def test_zero_encoder(self, rng):
        p = ModelParameters(ModelConfig())
        for W, b in zip(p.encoder.weights, p.encoder.biases):
            W.data[:] = 0
            b.data[:] = 0
        state = encode(build_graph(rng.uniform(size=(4, 4)), 8), p)
        np.testing.assert_array_equal(state.edges.data, 0)
        np.testing.assert_array_equal(state.nodes.data, 0)

    def test_shape_n2(self, rng):
        state = encode(build_graph(rng.uniform(size=(2, 2)), 8), ModelParameters(ModelConfig()))
        assert state.edges.shape == (4, 16) and state.nodes.shape == (4, 16)

    def test_encoder_gradient(self, rng):
        p = sharpen(ModelParameters(ModelConfig(**SMALL)))
        g = build_graph(rng.uniform(size=(4, 4)), 8)
        R = rng.normal(size=(g.num_edges, 4))
        W0 = p.encoder.weights[0]
        with Tape() as tape:
            out = encode(g, p).edges
            from lapforge import autodiff as ad

            loss = ad.sum(ad.mul(out, R))
        tape.backward(loss)
        for idx in np.ndindex(W0.shape):
            old = W0.data[idx]
            vals = []
            for s in (1e-6, -1e-6):
                W0.data[idx] = old + s
                vals.append(np.sum(encode(g, p).edges.data * R))
            W0.data[idx] = old
            fd = (vals[0] - vals[1]) / 2e-6
            assert abs(W0.grad[idx] - fd) / (abs(W0.grad[idx]) + 1e-8) < 1e-4


class TestAttention:
    def test_constant_nodes_pool(self):
        from lapforge.model import _pool

        u = np.arange(4.0)
        stats = _pool(Tensor(np.tile(u, (6, 1)))).data
        np.testing.assert_array_equal(stats, np.concatenate([u, u, u])[None, :])

    def test_ablation_gives_ones(self, rng):
        p = ModelParameters(ModelConfig(ablate_channel_attention=True))
        g = build_graph(rng.uniform(size=(5, 5)), 3)
        ctx = channel_attention(random_state(g, 16, rng), p)
        np.testing.assert_array_equal(ctx.c_v.data, 1.0)
        np.testing.assert_array_equal(ctx.c_e.data, 1.0)

    def test_range(self, rng):
        p = ModelParameters(ModelConfig())
        g = build_graph(rng.uniform(size=(5, 5)), 3)
        ctx = channel_attention(random_state(g, 16, rng), p)
        for c in (ctx.c_v.data, ctx.c_e.data):
            assert c.shape == (1, 16) and np.all((c > 0) & (c < 1))


class TestEdgeConv:
    def test_zero_state(self, rng):
        p = ModelParameters(ModelConfig())
        g = build_graph(rng.uniform(size=(4, 4)), 2)
        D = 16
        state = LatentGraphState(Tensor(np.zeros((8, D))), Tensor(np.zeros((8, D))))
        ctx = channel_attention(state, p)
        np.testing.assert_array_equal(edge_conv(g, state, ctx, p).data, 0)

    def test_shape(self, rng):
        p = ModelParameters(ModelConfig())
        g = build_graph(rng.uniform(size=(6, 6)), 4)
        state = random_state(g, 16, rng)
        assert edge_conv(g, state, channel_attention(state, p), p).shape == (24, 16)

    def test_single_edge_hand_evaluation(self, rng):
        p = sharpen(ModelParameters(ModelConfig(**SMALL)))
        g = build_graph([[0.7]], 8)
        state = random_state(g, 4, rng)
        c_v, c_e = rng.uniform(size=(1, 4)), rng.uniform(size=(1, 4))
        out = edge_conv(g, state, AttentionContext(Tensor(c_v), Tensor(c_e)), p).data
        v, e = state.nodes.data, state.edges.data
        ebar = np.concatenate([v[0] * c_v[0], v[1] * c_v[0], e[0] * c_e[0]])[None, :]
        np.testing.assert_allclose(out, np_mlp(p.rho_e, ebar), rtol=0, atol=1e-14)


class TestNodeConv:
    def test_two_node_hand_evaluation(self, rng):
        p = sharpen(ModelParameters(ModelConfig(**SMALL)))
        g = build_graph([[0.3]], 8)
        state = random_state(g, 4, rng)
        c_v, c_e = rng.uniform(size=4), rng.uniform(size=4)
        ctx = AttentionContext(Tensor(c_v[None]), Tensor(c_e[None]))
        out = node_conv(g, state, ctx, p).data
        v, e = state.nodes.data, state.edges.data[0]
        expected = []
        for i, j in ((0, 1), (1, 0)):
            w = np_mlp(p.tau, np.concatenate([v[i], v[j]])[None])[0, 0]
            msg = np_mlp(p.rho1_v, np.concatenate([e * c_e, w * v[j] * c_v])[None])
            expected.append(np_mlp(p.rho2_v, np.concatenate([msg[0], v[i]])[None])[0])
        np.testing.assert_allclose(out, np.array(expected), rtol=0, atol=1e-14)

    def test_single_neighbor_mean(self, rng):
        # t=1: every agent has one neighbor, so its aggregate is that single message
        p = sharpen(ModelParameters(ModelConfig(t=1, **SMALL)))
        C = rng.uniform(size=(3, 3))
        g = build_graph(C, 1)
        state = random_state(g, 4, rng)
        ctx = AttentionContext(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4))))
        out = node_conv(g, state, ctx, p).data
        v, e = state.nodes.data, state.edges.data
        for a in range(3):
            j = g.n + int(g.jobs[a])
            w = np_mlp(p.tau, np.concatenate([v[a], v[j]])[None])[0, 0]
            msg = np_mlp(p.rho1_v, np.concatenate([e[a], w * v[j]])[None])[0]
            np.testing.assert_allclose(out[a], np_mlp(p.rho2_v, np.concatenate([msg, v[a]])[None])[0], atol=1e-14)

    def test_ablated_weights_are_omitted(self, rng):
        p = sharpen(ModelParameters(ModelConfig(ablate_aggregation_weights=True, **SMALL)))
        g = build_graph(rng.uniform(size=(3, 3)), 8)
        state = random_state(g, 4, rng)
        ctx = channel_attention(state, p)
        out, omega = node_conv(g, state, ctx, p, return_weights=True)
        assert omega is None
        v, e = state.nodes.data, state.edges.data
        c_v, c_e = ctx.c_v.data[0], ctx.c_e.data[0]
        a = 0
        msgs = [
            np_mlp(p.rho1_v, np.concatenate([e[k] * c_e, v[g.n + int(g.jobs[k])] * c_v])[None])[0]
            for k in g.agent_adjacency[a]
        ]
        expected = np_mlp(p.rho2_v, np.concatenate([np.mean(msgs, axis=0), v[a]])[None])[0]
        np.testing.assert_allclose(out.data[a], expected, atol=1e-13)

    def test_isolated_job_gets_zero_aggregate(self):
        p = sharpen(ModelParameters(ModelConfig(t=2, **SMALL)))
        C = np.array([[0.0, 0.1, 9.0], [0.1, 0.0, 9.0], [0.0, 0.2, 9.0]])
        g = build_graph(C, 2)
        state = random_state(g, 4, np.random.default_rng(0))
        out = node_conv(g, state, channel_attention(state, p), p).data
        v = state.nodes.data
        expected = np_mlp(p.rho2_v, np.concatenate([np.zeros(4), v[g.n + 2]])[None])[0]
        np.testing.assert_allclose(out[g.n + 2], expected, atol=1e-14)

    def test_omega_range(self, rng):
        p = ModelParameters(ModelConfig())
        g = build_graph(rng.uniform(size=(5, 5)), 3)
        state = random_state(g, 16, rng)
        _, omega = node_conv(g, state, channel_attention(state, p), p, return_weights=True)
        assert omega.shape == (30, 1) and np.all((omega.data > 0) & (omega.data < 1))


class TestDecode:
    def test_zero_decoder(self, rng):
        p = ModelParameters(ModelConfig())
        for W, b in zip(p.decoder.weights, p.decoder.biases):
            W.data[:] = 0
            b.data[:] = 0
        g = build_graph(rng.uniform(size=(4, 4)), 8)
        np.testing.assert_array_equal(decode(encode(g, p), p).data, 0.5)

    def test_range(self, rng):
        p = sharpen(ModelParameters(ModelConfig()))
        y, _ = forward(rng.uniform(size=(12, 12)), p)
        assert np.all((y > 0) & (y < 1))


class TestForward:
    def test_deterministic(self, rng):
        p = ModelParameters(ModelConfig())
        C = rng.uniform(size=(9, 9))
        a, b = forward(C, p), forward(C, p)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_zero_outside_retained(self, rng):
        p = sharpen(ModelParameters(ModelConfig(t=3)))
        C = rng.uniform(size=(10, 10))
        g = build_graph(C, 3)
        _, Y = forward(C, p)
        mask = np.zeros((10, 10), dtype=bool)
        mask[g.agents, g.jobs] = True
        assert np.all(Y[~mask] == 0) and np.all(Y[mask] > 0)

    def test_shape_stability(self, rng):
        p = ModelParameters(ModelConfig())
        g = build_graph(rng.uniform(size=(7, 7)), 4)
        state = encode(g, p)
        for _ in range(3):
            ctx = channel_attention(state, p)
            edges = edge_conv(g, state, ctx, p)
            nodes = node_conv(g, LatentGraphState(state.nodes, edges), ctx, p)
            assert edges.shape == state.edges.shape and nodes.shape == state.nodes.shape
            state = LatentGraphState(nodes, edges)

    @pytest.mark.parametrize("attn", [False, True])
    @pytest.mark.parametrize("weights", [False, True])
    @pytest.mark.parametrize("n,t", [(1, 8), (6, 2), (12, 8), (40, 8)])
    def test_fast_path_matches_tape(self, attn, weights, n, t):
        rng = np.random.default_rng(n * 7 + t)
        cfg = ModelConfig(t=t, ablate_channel_attention=attn, ablate_aggregation_weights=weights)
        p = sharpen(ModelParameters(cfg, seed=n), seed=n)
        C = rng.uniform(size=(n, n))
        if n == 6:
            C[:, 5] += 10  # job 5 loses every edge
        g = build_graph(C, t)
        y_tape, Y_tape = forward_graph(g, p)
        y, Y = forward(C, p)
        np.testing.assert_allclose(y, y_tape.data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(Y, Y_tape.data, rtol=0, atol=1e-12)

    def test_double_ablation_equals_saturated_reference(self, rng):
        """Both flags on equals the full model with gates and weights pinned to exactly one."""
        p = sharpen(ModelParameters(ModelConfig(ablate_channel_attention=True, ablate_aggregation_weights=True)))
        ref = ModelParameters(ModelConfig())
        ref.load_state_dict(p.state_dict())
        for name in ("kappa_v", "kappa_e", "tau"):
            m = ref.modules[name]
            m.weights[-1].data[:] = 0
            m.biases[-1].data[:] = 1000.0  # sigmoid(1000) == 1.0 in float64
        C = rng.uniform(size=(8, 8))
        g = build_graph(C, 8)
        assert np.array_equal(forward_graph(g, p)[0].data, forward_graph(g, ref)[0].data)
        assert np.array_equal(forward(C, p)[0], forward(C, ref)[0])

    def test_row_permutation_equivariance(self, rng):
        p = sharpen(ModelParameters(ModelConfig()))
        C = rng.uniform(size=(12, 12))
        perm = rng.permutation(12)
        _, Y = forward(C, p)
        _, Yp = forward(C[perm], p)
        np.testing.assert_allclose(Yp, Y[perm], atol=1e-9)

    def test_receptive_field_two_iterations(self, rng):
        n = 4
        p = sharpen(ModelParameters(ModelConfig(conv_iterations=2, t=n)), seed=3)
        C = rng.uniform(size=(n, n))
        for i in range(n):
            for j in range(n):
                up, down = C.copy(), C.copy()
                up[i, j] += 1e-6
                down[i, j] -= 1e-6
                dY = (forward(up, p)[1] - forward(down, p)[1]) / 2e-6
                assert np.all(np.abs(dY) > 1e-12), (i, j)


@pytest.mark.parametrize(
    "flags",
    [
        dict(ablate_channel_attention=True),
        dict(ablate_aggregation_weights=True),
        dict(ablate_channel_attention=True, ablate_aggregation_weights=True),
    ],
)
def test_full_gradient_check_ablated(flags):
    rng = np.random.default_rng(5)
    C = rng.uniform(size=(5, 5))
    p = sharpen(ModelParameters(ModelConfig(**SMALL, **flags), seed=1), factor=1.2)
    g = build_graph(C, 8)
    ygt, _ = ground_truth_labels(g, hungarian(C))
    with Tape() as tape:
        y, Y = forward_graph(g, p)
        loss = combined_loss(y, ygt, Y, LossConfig(alpha=0.05))
    tape.backward(loss)
    analytic = flat_grad(p)
    _, fd, _ = finite_difference_gradients(p, C, ygt, alpha=0.05)
    used = ~np.isnan(fd)
    err = np.abs(analytic - fd) / (np.abs(analytic) + 1e-8)
    assert used.all() and err.max() < 1e-4


def test_gradient_check_with_isolated_job():
    C = np.array([[0.0, 0.1, 9.0, 0.3], [0.1, 0.0, 9.0, 0.2], [0.0, 0.2, 9.0, 0.1], [0.5, 0.1, 9.0, 0.0]])
    p = sharpen(ModelParameters(ModelConfig(t=2, **SMALL), seed=2), factor=1.2)
    g = build_graph(C, 2)
    assert g.job_degree[2] == 0
    ygt, _ = ground_truth_labels(g, hungarian(C))
    with Tape() as tape:
        y, Y = forward_graph(g, p)
        loss = combined_loss(y, ygt, Y, LossConfig(alpha=0.1))
    tape.backward(loss)
    analytic = flat_grad(p)
    _, fd, _ = finite_difference_gradients(p, C, ygt, alpha=0.1)
    err = np.abs(analytic - fd) / (np.abs(analytic) + 1e-8)
    assert err.max() < 1e-4
