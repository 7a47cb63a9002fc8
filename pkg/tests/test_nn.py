"""Dense layers, activations, losses, backprop, and Adam."""

import numpy as np
import pytest

from sessiongad.nn import (
    ACTIVATIONS,
    Adam,
    Dense,
    DenseNetwork,
    ShapeError,
    activate,
    bce_loss,
    mse_loss,
)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar loss over a parameter list."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


class TestForward:
    def test_identity_linear_layer(self):
        net = DenseNetwork([Dense(np.eye(3), np.zeros(3), "linear")])
        x = np.array([1.0, -2.0, 0.5])
        out, _ = net.forward(x)
        np.testing.assert_array_equal(out, x)

    def test_elu_values(self):
        z = np.array([0.0, -1.0, 2.0])
        out = activate("elu", z)
        assert out[0] == 0.0
        assert out[1] == pytest.approx(np.exp(-1.0) - 1.0, abs=1e-12)
        assert out[2] == 2.0

    def test_sigmoid_at_zero(self):
        assert activate("sigmoid", np.array([0.0]))[0] == pytest.approx(0.5)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(4, 5))
        out = activate("softmax", z)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_width_mismatch_raises(self):
        net = DenseNetwork([Dense(np.eye(3), np.zeros(3), "linear")])
        with pytest.raises(ShapeError):
            net.forward(np.zeros(4))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        net = DenseNetwork.create([4, 3, 2], ["elu", "sigmoid"], rng)
        xs = rng.normal(size=(5, 4))
        batch, _ = net.forward(xs)
        for i in range(5):
            single, _ = net.forward(xs[i])
            np.testing.assert_allclose(batch[i], single, atol=1e-15)


class TestBackward:
    def test_zero_output_gradient(self):
        rng = np.random.default_rng(2)
        net = DenseNetwork.create([3, 4, 2], ["tanh", "linear"], rng)
        out, cache = net.forward(rng.normal(size=3))
        grads, gin = net.backward(cache, np.zeros_like(out))
        for g in grads:
            assert not g.any()
        assert not gin.any()

    def test_one_layer_linear_mse_analytic(self):
        # weight gradient of mean((Wx - y)^2) is 2 (Wx - y) x^T / |y|
        rng = np.random.default_rng(3)
        w = rng.normal(size=(3, 4))
        net = DenseNetwork([Dense(w.copy(), np.zeros(3), "linear")])
        x = rng.normal(size=4)
        y = rng.normal(size=3)
        out, cache = net.forward(x)
        _, dpred = mse_loss(out, y)
        grads, _ = net.backward(cache, dpred)
        expected = 2.0 * np.outer(w @ x - y, x) / 3.0
        np.testing.assert_allclose(grads[0], expected, atol=1e-12)

    def test_two_layer_finite_difference(self):
        rng = np.random.default_rng(4)
        net = DenseNetwork.create([5, 4, 3], ["elu", "tanh"], rng)
        x = rng.normal(size=(2, 5))
        y = rng.normal(size=(2, 3))

        def loss_fn():
            out, _ = net.forward(x)
            return mse_loss(out, y)[0]

        out, cache = net.forward(x)
        _, dpred = mse_loss(out, y)
        grads, _ = net.backward(cache, dpred)
        numeric = finite_difference_grads(loss_fn, net.params())
        assert max_rel_error(grads, numeric) < 1e-4

    @pytest.mark.parametrize("act", ["linear", "elu", "tanh", "sigmoid", "softmax"])
    def test_every_activation_with_mse(self, act):
        rng = np.random.default_rng(hash(act) % 2**32)
        net = DenseNetwork.create([4, 4, 3], ["elu", act], rng)
        x = rng.normal(size=(3, 4))
        y = rng.uniform(0.1, 0.9, size=(3, 3))

        def loss_fn():
            out, _ = net.forward(x)
            return mse_loss(out, y)[0]

        out, cache = net.forward(x)
        _, dpred = mse_loss(out, y)
        grads, _ = net.backward(cache, dpred)
        numeric = finite_difference_grads(loss_fn, net.params())
        assert max_rel_error(grads, numeric) < 1e-4

    @pytest.mark.parametrize("act", ["sigmoid", "softmax"])
    def test_bce_through_squashing_heads(self, act):
        rng = np.random.default_rng(5)
        net = DenseNetwork.create([4, 5, 3], ["tanh", act], rng)
        x = rng.normal(size=(2, 4))
        y = (rng.random(size=(2, 3)) > 0.5).astype(float)

        def loss_fn():
            out, _ = net.forward(x)
            return bce_loss(out, y)[0]

        out, cache = net.forward(x)
        _, dpred = bce_loss(out, y)
        grads, _ = net.backward(cache, dpred)
        numeric = finite_difference_grads(loss_fn, net.params())
        assert max_rel_error(grads, numeric) < 1e-4

    def test_masked_mse_ignores_masked_entries(self):
        pred = np.array([[1.0, 5.0], [2.0, -3.0]])
        target = np.zeros((2, 2))
        mask = np.array([[1.0, 0.0], [1.0, 0.0]])
        loss, grad = mse_loss(pred, target, mask)
        assert loss == pytest.approx((1.0 + 4.0) / 2.0)
        assert grad[0, 1] == 0.0 and grad[1, 1] == 0.0


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.ones((2, 2)), np.ones(3)]
        opt = Adam(p)
        before = [a.copy() for a in p]
        opt.step(p, [np.zeros_like(a) for a in p])
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)

    def test_constant_gradient_update_approaches_lr(self):
        # with a constant gradient the bias-corrected update tends to lr
        p = [np.array([0.0])]
        g = [np.array([3.7])]
        opt = Adam(p, lr=1e-3)
        prev = p[0].copy()
        for _ in range(500):
            prev = p[0].copy()
            opt.step(p, g)
        step = abs(float(p[0][0] - prev[0]))
        assert step == pytest.approx(1e-3, rel=0.01)

    def test_step_counter_increments(self):
        p = [np.zeros(2)]
        opt = Adam(p)
        assert opt.step_count == 0
        opt.step(p, [np.ones(2)])
        assert opt.step_count == 1
        opt.step(p, [np.ones(2)])
        assert opt.step_count == 2

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(11)
            net = DenseNetwork.create([3, 4, 1], ["tanh", "linear"], rng)
            opt = Adam(net.params(), lr=1e-2)
            x = rng.normal(size=(8, 3))
            y = rng.normal(size=(8, 1))
            for _ in range(20):
                out, cache = net.forward(x)
                _, d = mse_loss(out, y)
                grads, _ = net.backward(cache, d)
                opt.step(net.params(), grads)
            return [p.copy() for p in net.params()]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)
