import math

import numpy as np
import pytest

from protoagg.errors import DimensionMismatchError, FormatError
from protoagg.network import (
    SELU_ALPHA,
    SELU_LAMBDA,
    EmbeddingNetwork,
    MlpArchitecture,
    adam_step,
    init_adam,
    init_network,
    load_network,
    save_network,
    selu,
    selu_derivative,
)


class TestSelu:
    def test_zero_fixed_point(self):
        assert selu(0.0) == 0.0

    def test_positive_slope(self):
        assert abs(selu(1.0) - SELU_LAMBDA) < 1e-15

    def test_negative_limit(self):
        assert abs(selu(-50.0) - (-SELU_LAMBDA * SELU_ALPHA)) <= 1e-12

    def test_continuity_at_origin(self):
        assert abs(selu(1e-9) - selu(-1e-9)) <= 1e-8

    def test_derivative_matches_finite_differences(self):
        h = 1e-7
        for t in (-3.0, -0.5, 0.3, 2.0):
            fd = (selu(t + h) - selu(t - h)) / (2 * h)
            assert abs(selu_derivative(t) - fd) < 1e-6


class TestArchitecture:
    def test_funnel_widths_512(self):
        arch = MlpArchitecture("funnel", 3, 512, 16)
        assert arch.layer_widths() == (512, 256, 16)

    def test_fat_widths_512(self):
        arch = MlpArchitecture("fat", 3, 512, 16)
        assert arch.layer_widths() == (512, 512, 16)

    def test_single_layer(self):
        assert MlpArchitecture("funnel", 1, 128, 16).layer_widths() == (16,)

    def test_too_deep_funnel_rejected(self):
        # an 8-layer funnel on 512 would reach hidden width 8 < output_dim 16
        with pytest.raises(ValueError):
            MlpArchitecture("funnel", 8, 512, 16)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            MlpArchitecture("pyramid", 3, 512, 16)


def _loop_forward(net, x):
    """Independent dense-math oracle: plain Python loops, no numpy matmul."""
    a = [float(v) for v in x]
    last = len(net.weights) - 1
    for layer, (W, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for i in range(W.shape[0]):
            acc = math.fsum(W[i, j] * a[j] for j in range(W.shape[1])) + b[i]
            if layer != last:
                acc = SELU_LAMBDA * acc if acc > 0 else SELU_LAMBDA * SELU_ALPHA * math.expm1(acc)
            out.append(acc)
        a = out
    return np.array(a)


class TestForward:
    def test_zero_network_maps_to_zero(self):
        arch = MlpArchitecture("funnel", 2, 64, 16)
        net = EmbeddingNetwork(
            arch,
            [np.zeros((64, 64)), np.zeros((16, 64))],
            [np.zeros(64), np.zeros(16)],
        )
        rng = np.random.default_rng(0)
        assert np.array_equal(net.forward(rng.random(64)), np.zeros(16))

    def test_single_layer_selects_weight_column(self):
        arch = MlpArchitecture("funnel", 1, 64, 8)
        rng = np.random.default_rng(1)
        W = rng.standard_normal((8, 64))
        net = EmbeddingNetwork(arch, [W], [np.zeros(8)])
        e3 = np.zeros(64)
        e3[3] = 1.0
        np.testing.assert_allclose(net.forward(e3), W[:, 3], atol=1e-15)

    def test_matches_loop_oracle(self):
        arch = MlpArchitecture("funnel", 3, 64, 16)
        net = init_network(arch, seed=7)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = (rng.random(64) < 0.5).astype(np.float64)
            np.testing.assert_allclose(net.forward(x), _loop_forward(net, x), atol=1e-10)

    def test_deterministic(self):
        net = init_network(MlpArchitecture("fat", 2, 64, 8), seed=3)
        x = np.random.default_rng(4).random(64)
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_dimension_mismatch_rejected(self):
        net = init_network(MlpArchitecture("funnel", 2, 64, 8), seed=0)
        with pytest.raises(DimensionMismatchError):
            net.forward(np.zeros(65))


class TestForwardBatch:
    def test_batch_of_one_equals_forward(self):
        net = init_network(MlpArchitecture("funnel", 3, 64, 16), seed=5)
        x = np.random.default_rng(6).random(64)
        np.testing.assert_allclose(net.forward_batch(x[None, :])[0], net.forward(x), atol=1e-12)

    def test_duplicated_rows_give_duplicated_embeddings(self):
        net = init_network(MlpArchitecture("fat", 2, 64, 8), seed=7)
        x = np.random.default_rng(8).random(64)
        Y = net.forward_batch(np.stack([x, x, x]))
        assert np.array_equal(Y[0], Y[1]) and np.array_equal(Y[1], Y[2])

    def test_rows_match_forward_loop(self):
        net = init_network(MlpArchitecture("funnel", 3, 64, 16), seed=9)
        X = np.random.default_rng(10).random((32, 64))
        Y = net.forward_batch(X)
        for i in range(32):
            np.testing.assert_allclose(Y[i], net.forward(X[i]), atol=1e-12)


from gradcheck import (  # noqa: E402
    find_instances,
    finite_difference_gradients,
    make_episode_instance,
    make_triplet_instance,
    max_relative_error,
)


class TestBackward:
    def test_constant_loss_gives_zero_gradients(self):
        net = init_network(MlpArchitecture("funnel", 2, 64, 8), seed=11)
        X = np.random.default_rng(12).random((4, 64))
        _, trace = net.forward_batch_trace(X)
        grads = net.backward(trace, np.zeros((4, 8)))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)

    def test_requires_recorded_forward(self):
        net = init_network(MlpArchitecture("funnel", 2, 64, 8), seed=13)
        with pytest.raises(ValueError):
            net.backward(None, np.zeros((1, 8)))

    def test_single_linear_layer_squared_norm(self):
        # L = |f(x)|^2 / 2 with f = W x: dL/dW = f(x) x^T, hand calculus on 2x2
        arch = MlpArchitecture("fat", 1, 64, 2)
        rng = np.random.default_rng(14)
        W = np.zeros((2, 64))
        W[:2, :2] = rng.standard_normal((2, 2))
        net = EmbeddingNetwork(arch, [W], [np.zeros(2)])
        x = np.zeros(64)
        x[:2] = rng.standard_normal(2)
        y, trace = net.forward_batch_trace(x[None, :])
        grads = net.backward(trace, y)  # dL/dy = y for L = |y|^2/2
        np.testing.assert_allclose(grads[0], np.outer(y[0], x), atol=1e-12)

    def test_triplet_loss_matches_finite_differences(self):
        (net, loss_fn, grads), = find_instances(make_triplet_instance, 1, start_seed=0)
        fd = finite_difference_gradients(net, loss_fn)
        assert max_relative_error(grads, fd) <= 1e-4

    def test_prototypical_loss_matches_finite_differences(self):
        (net, loss_fn, grads), = find_instances(make_episode_instance, 1, start_seed=0)
        fd = finite_difference_gradients(net, loss_fn)
        assert max_relative_error(grads, fd) <= 1e-4


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        params = [np.ones((2, 2)), np.ones(2)]
        state = init_adam(params, lr=0.1)
        before = [p.copy() for p in params]
        adam_step(params, [np.zeros((2, 2)), np.zeros(2)], state)
        assert all(np.array_equal(a, b) for a, b in zip(params, before))
        assert state.t == 1

    def test_first_step_moves_by_lr_times_sign(self):
        params = [np.array([1.0, -2.0, 3.0])]
        g = np.array([0.5, -0.25, 1.0])
        state = init_adam(params, lr=0.01)
        adam_step(params, [g.copy()], state)
        # bias-corrected first step is -lr * g / (|g| + eps'): one lr-sized
        # step against the gradient sign, up to the eps perturbation
        expected = np.array([1.0, -2.0, 3.0]) - 0.01 * np.sign(g)
        np.testing.assert_allclose(params[0], expected, atol=1e-5)

    def test_descends_quadratic_bowl(self):
        # L = |w|^2 / 2, gradient w; norms must shrink after warmup
        w = [np.array([5.0, -3.0])]
        state = init_adam(w, lr=0.001)
        norms = []
        for _ in range(100):
            adam_step(w, [w[0].copy()], state)
            norms.append(np.linalg.norm(w[0]))
        assert all(b < a for a, b in zip(norms[10:], norms[11:]))
        assert norms[-1] < norms[0]

    def test_shape_mismatch_rejected(self):
        params = [np.zeros(3)]
        state = init_adam(params, lr=0.1)
        with pytest.raises(DimensionMismatchError):
            adam_step(params, [np.zeros(4)], state)


class TestInit:
    def test_same_seed_identical(self):
        arch = MlpArchitecture("funnel", 3, 512, 16)
        a = init_network(arch, seed=42)
        b = init_network(arch, seed=42)
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))

    def test_different_seeds_differ(self):
        arch = MlpArchitecture("funnel", 2, 64, 16)
        a = init_network(arch, seed=1)
        b = init_network(arch, seed=2)
        assert any(not np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))

    def test_fan_in_scaling(self):
        net = init_network(MlpArchitecture("fat", 2, 512, 16), seed=3)
        sd = net.weights[0].std()
        assert abs(sd - 1.0 / np.sqrt(512)) < 0.1 / np.sqrt(512)

    def test_biases_zero(self):
        net = init_network(MlpArchitecture("funnel", 3, 512, 16), seed=4)
        assert all(np.array_equal(b, np.zeros_like(b)) for b in net.biases)


class TestModelFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        net = init_network(MlpArchitecture("funnel", 3, 512, 16), seed=5)
        path = tmp_path / "model.pagg"
        save_network(net, path)
        first = path.read_bytes()
        loaded = load_network(path)
        assert loaded.arch == net.arch
        assert all(np.array_equal(a, b) for a, b in zip(loaded.parameters(), net.parameters()))
        save_network(loaded, path)
        assert path.read_bytes() == first

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pagg"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_network(path)

    def test_truncation_rejected(self, tmp_path):
        net = init_network(MlpArchitecture("funnel", 2, 64, 8), seed=6)
        path = tmp_path / "model.pagg"
        save_network(net, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError):
            load_network(path)
