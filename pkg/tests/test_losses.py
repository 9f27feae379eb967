import numpy as np
import pytest

from lapforge import autodiff as ad
from lapforge.autodiff import Tape, Tensor
from lapforge.core import permutation_to_matrix
from lapforge.losses import LossConfig, balanced_bce, combined_loss, constraint_l1, constraint_l2

H = 1e-6


def fd_check(fn, x, tol=1e-4):
    t = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = fn(t)
    tape.backward(out)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += H
        down[idx] -= H
        fd = (float(fn(Tensor(up)).data) - float(fn(Tensor(down)).data)) / (2 * H)
        assert abs(t.grad[idx] - fd) / (abs(t.grad[idx]) + 1e-8) < tol


class TestBCE:
    def test_perfect_prediction(self):
        g = np.array([1.0, 0.0, 0.0, 1.0])
        cfg = LossConfig()
        val = float(balanced_bce(g.copy(), g, cfg).data)
        assert 0 <= val <= g.size * cfg.epsilon_log * 2

    def test_single_edge(self):
        val = float(balanced_bce(np.array([0.5]), np.array([1.0]), LossConfig(w=0.9)).data)
        assert val == pytest.approx(0.9 * np.log(2), abs=1e-15)
        assert round(val, 5) == 0.62383

    def test_gradient(self, rng):
        g = (rng.uniform(size=12) < 0.3).astype(float)
        fd_check(lambda y: balanced_bce(y, g), rng.uniform(0.05, 0.95, size=12))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            balanced_bce(np.array([0.5, 0.5]), np.array([1.0]))

    def test_symmetry(self, rng):
        y = rng.uniform(0.01, 0.99, size=20)
        g = (rng.uniform(size=20) < 0.5).astype(float)
        a = float(balanced_bce(y, g, LossConfig(w=0.8)).data)
        b = float(balanced_bce(1.0 - y, 1.0 - g, LossConfig(w=0.2)).data)
        assert a == pytest.approx(b, rel=1e-12)

    def test_non_negative(self, rng):
        for _ in range(50):
            y = rng.uniform(size=9)
            g = (rng.uniform(size=9) < 0.5).astype(float)
            assert float(balanced_bce(y, g).data) >= 0


class TestConstraints:
    def test_vanish_on_permutations(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 12))
            X = permutation_to_matrix(rng.permutation(n)).astype(float)
            assert abs(float(constraint_l1(X).data)) <= 1e-12
            assert abs(float(constraint_l2(X).data)) <= 1e-12

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_l1_zero_matrix(self, n):
        assert float(constraint_l1(np.zeros((n, n))).data) == pytest.approx(2 * np.sqrt(n), abs=1e-12)

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_l2_uniform(self, n):
        val = float(constraint_l2(np.full((n, n), 1.0 / n)).data)
        assert val == pytest.approx(2 * np.sqrt(n) * (1 - 1 / np.sqrt(n)), abs=1e-12)

    def test_l1_gradient(self, rng):
        fd_check(constraint_l1, rng.uniform(size=(5, 5)))

    def test_l2_gradient(self, rng):
        fd_check(constraint_l2, rng.uniform(size=(5, 5)))

    def test_non_negative(self, rng):
        for _ in range(50):
            Y = rng.uniform(size=(4, 4))
            assert float(constraint_l1(Y).data) >= 0 and float(constraint_l2(Y).data) >= 0


class TestCombined:
    def test_alpha_zero_is_bce(self, rng):
        y = rng.uniform(0.1, 0.9, size=4)
        g = np.array([1.0, 0, 0, 1])
        Y = y.reshape(2, 2)
        assert float(combined_loss(y, g, Y, LossConfig(alpha=0)).data) == float(balanced_bce(y, g).data)

    def test_perfect_one_hot(self):
        X = permutation_to_matrix([1, 2, 0]).astype(float)
        y = X.ravel()
        assert float(combined_loss(y, y, X, LossConfig(alpha=0.5)).data) <= 9 * 2e-12

    def test_arithmetic_identity(self, rng):
        y = rng.uniform(0.1, 0.9, size=16)
        g = (rng.uniform(size=16) < 0.25).astype(float)
        Y = y.reshape(4, 4)
        parts = {}
        total = float(combined_loss(y, g, Y, LossConfig(alpha=0.05), parts=parts).data)
        la = float(balanced_bce(y, g).data)
        lc = float(constraint_l1(Y).data) + float(constraint_l2(Y).data)
        assert total == pytest.approx(la + 0.05 * lc, abs=1e-12)
        assert parts["bce"] == la and parts["constraint"] == pytest.approx(lc, abs=1e-15)

    def test_gradient_through_shared_input(self, rng):
        g = (rng.uniform(size=9) < 0.3).astype(float)
        cfg = LossConfig(alpha=0.3)
        fd_check(lambda y: combined_loss(y, g, ad.reshape(y, (3, 3)), cfg), rng.uniform(0.05, 0.95, size=9))

    def test_gradient_additive(self, rng):
        y0 = rng.uniform(0.1, 0.9, size=9)
        g = (rng.uniform(size=9) < 0.3).astype(float)
        cfg = LossConfig(alpha=0.2)

        def grad(fn):
            t = Tensor(y0.copy(), requires_grad=True)
            with Tape() as tape:
                out = fn(t)
            tape.backward(out)
            return t.grad

        full = grad(lambda y: combined_loss(y, g, ad.reshape(y, (3, 3)), cfg))
        split = grad(lambda y: balanced_bce(y, g)) + 0.2 * (
            grad(lambda y: constraint_l1(ad.reshape(y, (3, 3)))) + grad(lambda y: constraint_l2(ad.reshape(y, (3, 3))))
        )
        np.testing.assert_allclose(full, split, atol=1e-12)

    def test_flags_drop_terms(self, rng):
        y = rng.uniform(0.1, 0.9, size=4)
        g = np.array([1.0, 0, 0, 1])
        Y = y.reshape(2, 2)
        la = float(balanced_bce(y, g).data)
        l1 = float(constraint_l1(Y).data)
        got = float(combined_loss(y, g, Y, LossConfig(alpha=0.1, use_l2=False)).data)
        assert got == pytest.approx(la + 0.1 * l1, abs=1e-14)

    def test_config_validation(self):
        for bad in (dict(w=0.0), dict(w=1.0), dict(alpha=-1), dict(epsilon_log=0)):
            with pytest.raises(ValueError):
                LossConfig(**bad)
