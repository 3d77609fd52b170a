"""Hand-rolled net: forward fixtures, finite-difference gradients, Adam, polyak."""

import numpy as np
import pytest

from planbridge import nets


def zero_net(input_dim=2, hidden=(2,)):
    sizes = [input_dim] + list(hidden) + [1]
    return nets.MLPParams(
        [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
        [np.zeros(b) for b in sizes[1:]],
    )


class TestForward:
    def test_zero_net_outputs_zero(self):
        params = zero_net()
        assert nets.forward(params, [1.7, -2.3]) == 0.0

    def test_hand_computed_2_2_1(self):
        # h = relu(x @ W1 + b1); y = h @ W2 + b2, all by hand below.
        w1 = np.array([[1.0, -1.0], [0.5, 2.0]])
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[1.0], [-1.0]])
        b2 = np.array([0.25])
        params = nets.MLPParams([w1, w2], [b1, b2])
        x = np.array([2.0, 1.0])
        # pre1 = [2*1 + 1*0.5 + 0.1, 2*(-1) + 1*2 - 0.2] = [2.6, -0.2]
        # h = [2.6, 0]; y = 2.6*1 + 0*(-1) + 0.25 = 2.85
        assert nets.forward(params, x) == pytest.approx(2.85, abs=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        params = nets.init_mlp(3, [32, 32], rng)
        x = rng.normal(size=3)
        assert nets.forward(params, x) == nets.forward(params, x)

    def test_dimension_mismatch(self):
        params = zero_net()
        with pytest.raises(ValueError):
            nets.forward(params, [1.0, 2.0, 3.0])


class TestBackward:
    def test_output_bias_gradient_is_upstream(self):
        rng = np.random.default_rng(1)
        params = nets.init_mlp(3, [4], rng)
        grads = nets.backward(params, rng.normal(size=3), upstream=2.5)
        assert grads.biases[-1][0] == pytest.approx(2.5, abs=1e-12)

    def test_zero_upstream_zero_gradients(self):
        rng = np.random.default_rng(2)
        params = nets.init_mlp(3, [4, 4], rng)
        grads = nets.backward(params, rng.normal(size=3), upstream=0.0)
        for arr in grads.weights + grads.biases:
            assert np.all(arr == 0.0)

    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(20):
            dim = int(rng.integers(2, 6))
            params = nets.init_mlp(dim, [5, 4], rng)
            x = rng.normal(size=dim)
            grads = nets.backward(params, x, 1.0)
            eps = 1e-5
            for arrs, garrs in ((params.weights, grads.weights),
                                (params.biases, grads.biases)):
                for arr, g in zip(arrs, garrs):
                    flat, gflat = arr.ravel(), g.ravel()
                    for j in rng.choice(flat.size, min(8, flat.size), replace=False):
                        old = flat[j]
                        flat[j] = old + eps
                        up = nets.forward(params, x)
                        flat[j] = old - eps
                        down = nets.forward(params, x)
                        flat[j] = old
                        fd = (up - down) / (2 * eps)
                        rel = abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), 1.0)
                        worst = max(worst, rel)
        assert worst <= 1e-4

    def test_batch_matches_sum_of_singles(self):
        rng = np.random.default_rng(4)
        params = nets.init_mlp(3, [4], rng)
        X = rng.normal(size=(5, 3))
        ups = rng.normal(size=5)
        batch = nets.backward_batch(params, X, ups)
        acc = [np.zeros_like(w) for w in params.weights]
        acc_b = [np.zeros_like(b) for b in params.biases]
        for row, u in zip(X, ups):
            g = nets.backward(params, row, float(u))
            for i in range(len(acc)):
                acc[i] += g.weights[i]
                acc_b[i] += g.biases[i]
        for got, want in zip(batch.weights + batch.biases, acc + acc_b):
            assert np.allclose(got, want, atol=1e-12)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        rng = np.random.default_rng(5)
        params = nets.init_mlp(2, [3], rng)
        state = nets.AdamState.zeros_like(params)
        new, state2 = nets.adam_step(params, zero_like_grads(params), state)
        assert state2.t == 1
        for a, b in zip(new.weights, params.weights):
            assert np.array_equal(a, b)

    def test_single_scalar_first_step(self):
        params = nets.MLPParams([np.array([[0.0]])], [np.array([0.0])])
        grads = nets.MLPParams([np.array([[1.0]])], [np.array([0.0])])
        state = nets.AdamState.zeros_like(params)
        new, _ = nets.adam_step(params, grads, state, lr=1e-3)
        # Bias-corrected m-hat = 1, v-hat = 1: update = -lr * 1 / (1 + eps).
        expected = -1e-3 * 1.0 / (1.0 + 1e-8)
        assert new.weights[0][0, 0] == pytest.approx(expected, abs=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        params = nets.init_mlp(2, [3], rng)
        grads = nets.init_mlp(2, [3], rng)
        s0 = nets.AdamState.zeros_like(params)
        a1, s1 = nets.adam_step(params, grads, s0)
        a2, s2 = nets.adam_step(params, grads, s0)
        for x, y in zip(a1.weights + a1.biases, a2.weights + a2.biases):
            assert np.array_equal(x, y)
        assert s1.t == s2.t == 1


def zero_like_grads(params):
    return nets.MLPParams(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


class TestPolyak:
    def test_tau_one_returns_online(self):
        rng = np.random.default_rng(7)
        target = nets.init_mlp(2, [3], rng)
        online = nets.init_mlp(2, [3], rng)
        out = nets.polyak(target, online, 1.0)
        for a, b in zip(out.weights, online.weights):
            assert np.array_equal(a, b)

    def test_tau_zero_returns_target(self):
        rng = np.random.default_rng(8)
        target = nets.init_mlp(2, [3], rng)
        online = nets.init_mlp(2, [3], rng)
        out = nets.polyak(target, online, 0.0)
        for a, b in zip(out.weights, target.weights):
            assert np.array_equal(a, b)

    def test_table_rate_value(self):
        target = zero_net()
        online = nets.MLPParams(
            [np.ones_like(w) for w in target.weights],
            [np.ones_like(b) for b in target.biases],
        )
        out = nets.polyak(target, online, 0.0025)
        for arr in out.weights + out.biases:
            assert np.all(arr == 0.0025)

    def test_contraction(self):
        target = nets.MLPParams([np.array([[4.0]])], [np.array([0.0])])
        online = nets.MLPParams([np.array([[1.0]])], [np.array([0.0])])
        tau = 0.25
        out = nets.polyak(target, online, tau)
        assert abs(out.weights[0][0, 0] - 1.0) == pytest.approx(
            (1 - tau) * abs(4.0 - 1.0), abs=1e-12
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nets.polyak(zero_net(2, (2,)), zero_net(3, (2,)), 0.5)


class TestCheckpoint:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        params = nets.init_mlp(4, [32, 32], rng)
        payload = nets.params_to_json(params)
        back = nets.params_from_json(payload)
        assert back.layer_sizes == [4, 32, 32, 1]
        for a, b in zip(back.weights + back.biases, params.weights + params.biases):
            assert np.array_equal(a, b)
