import numpy as np
import pytest

from helpers_numeric import gradcheck

from cemlab import autodiff as ad
from cemlab.autodiff import Tape


def manual_softmax_ce(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return float(-np.log(p[np.arange(len(labels)), labels]).mean()), p


class TestGradcheck:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_graphs(self, seed):
        assert gradcheck(seed) < 1e-4


class TestLosses:
    def test_softmax_ce_value_and_grad(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(6, 3))
        labels = rng.integers(0, 3, size=6)
        tape = Tape()
        z = tape.leaf(logits)
        loss = ad.softmax_cross_entropy(z, labels)
        expected, p = manual_softmax_ce(logits, labels)
        assert abs(float(loss.values) - expected) < 1e-12
        tape.backward(loss)
        onehot = np.eye(3)[labels]
        np.testing.assert_allclose(z.grad, (p - onehot) / 6, atol=1e-12)

    def test_bce_value_and_grad(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(5, 4))
        targets = rng.integers(0, 2, size=(5, 4)).astype(np.float64)
        tape = Tape()
        z = tape.leaf(logits)
        loss = ad.bce_with_logits(z, targets)
        p = 1 / (1 + np.exp(-logits))
        expected = float(-(targets * np.log(p) + (1 - targets) * np.log(1 - p)).mean())
        assert abs(float(loss.values) - expected) < 1e-10
        tape.backward(loss)
        np.testing.assert_allclose(z.grad, (p - targets) / logits.size, atol=1e-12)

    def test_weighted_bce_upweights_positives(self):
        logits = np.array([[0.3, -0.7], [1.2, 0.1]])
        targets = np.array([[1.0, 0.0], [0.0, 1.0]])
        w = np.array([2.0, 3.0])
        tape = Tape()
        loss = ad.bce_with_logits(tape.leaf(logits), targets, w)
        p = 1 / (1 + np.exp(-logits))
        terms = -(w * targets * np.log(p) + (1 - targets) * np.log(1 - p))
        assert abs(float(loss.values) - terms.mean()) < 1e-12

    def test_bce_extreme_logits_finite(self):
        tape = Tape()
        z = tape.leaf(np.array([[1000.0, -1000.0]]))
        loss = ad.bce_with_logits(z, np.array([[0.0, 1.0]]))
        assert np.isfinite(float(loss.values))
        tape.backward(loss)
        assert np.isfinite(z.grad).all()


class TestOps:
    def test_sigmoid_extremes_stable(self):
        tape = Tape()
        out = ad.sigmoid(tape.leaf(np.array([[800.0, -800.0, 0.0]])))
        np.testing.assert_allclose(out.values, [[1.0, 0.0, 0.5]], atol=1e-12)

    def test_broadcast_add_unbroadcasts_grad(self):
        tape = Tape()
        a = tape.leaf(np.ones((4, 3)))
        b = tape.leaf(np.ones((1, 3)))
        loss = ad.asum(ad.add(a, b))
        tape.backward(loss)
        np.testing.assert_allclose(b.grad, np.full((1, 3), 4.0))
        np.testing.assert_allclose(a.grad, np.ones((4, 3)))

    def test_mismatched_shapes_raise(self):
        tape = Tape()
        a = tape.leaf(np.ones((4, 3)))
        b = tape.leaf(np.ones((4, 2)))
        with pytest.raises(ValueError):
            ad.add(a, b)

    def test_stop_gradient_blocks(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)))
        loss = ad.asum(ad.mul(ad.stop_gradient(a), a))
        tape.backward(loss)
        np.testing.assert_allclose(loss.values, 4.0)
        # Only the live factor receives gradient.
        np.testing.assert_allclose(a.grad, np.ones((2, 2)))

    def test_concat_backward_splits(self):
        tape = Tape()
        a = tape.leaf(np.ones((3, 2)))
        b = tape.leaf(np.ones((3, 4)))
        out = ad.concat([a, b])
        assert out.shape == (3, 6)
        loss = ad.asum(ad.scale(out, 2.0))
        tape.backward(loss)
        np.testing.assert_allclose(a.grad, np.full((3, 2), 2.0))
        np.testing.assert_allclose(b.grad, np.full((3, 4), 2.0))

    def test_matmul_grads(self):
        rng = np.random.default_rng(2)
        av, bv = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        tape = Tape()
        a, b = tape.leaf(av), tape.leaf(bv)
        loss = ad.asum(ad.matmul(a, b))
        tape.backward(loss)
        g = np.ones((3, 2))
        np.testing.assert_allclose(a.grad, g @ bv.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, av.T @ g, atol=1e-12)

    def test_mean_is_sum_over_size(self):
        tape = Tape()
        a = tape.leaf(np.arange(6.0).reshape(2, 3))
        m = ad.amean(a)
        assert abs(float(m.values) - 2.5) < 1e-15
        tape.backward(m)
        np.testing.assert_allclose(a.grad, np.full((2, 3), 1 / 6))

    def test_leaky_relu_slope(self):
        tape = Tape()
        a = tape.leaf(np.array([[-2.0, 3.0]]))
        out = ad.leaky_relu(a, slope=0.01)
        np.testing.assert_allclose(out.values, [[-0.02, 3.0]])
        tape.backward(ad.asum(out))
        np.testing.assert_allclose(a.grad, [[0.01, 1.0]])

    def test_grad_accumulates_over_reuse(self):
        tape = Tape()
        a = tape.leaf(np.array([[1.5]]))
        out = ad.add(ad.mul(a, a), ad.scale(a, 3.0))  # a^2 + 3a
        tape.backward(ad.asum(out))
        np.testing.assert_allclose(a.grad, [[2 * 1.5 + 3.0]])
