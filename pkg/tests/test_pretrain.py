import math

import numpy as np
import pytest

from conftest import finite_difference, rel_err
from subitizer.errors import ConfigError
from subitizer.nn import DenseLayer, make_rng
from subitizer.pretrain import (
    AutoencoderLayer,
    PretrainSchedule,
    RbmLayer,
    autoencoder_layer_update,
    greedy_pretrain,
    pretrain_association_joint,
    rbm_cd1_update,
    train_layer,
)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _cd1_oracle(w, vb, hb, v0, uniforms, lr):
    """Scalar CD-1: binary hidden sample, probability reconstruction."""
    n_h, n_v = len(w), len(w[0])
    B = len(v0)
    dw = [[0.0] * n_v for _ in range(n_h)]
    dvb, dhb = [0.0] * n_v, [0.0] * n_h
    for b in range(B):
        h0 = [_sig(sum(w[j][i] * v0[b][i] for i in range(n_v)) + hb[j]) for j in range(n_h)]
        hs = [1.0 if uniforms[b][j] < h0[j] else 0.0 for j in range(n_h)]
        v1 = [_sig(sum(w[j][i] * hs[j] for j in range(n_h)) + vb[i]) for i in range(n_v)]
        h1 = [_sig(sum(w[j][i] * v1[i] for i in range(n_v)) + hb[j]) for j in range(n_h)]
        for j in range(n_h):
            for i in range(n_v):
                dw[j][i] += (h0[j] * v0[b][i] - h1[j] * v1[i]) / B
            dhb[j] += (h0[j] - h1[j]) / B
        for i in range(n_v):
            dvb[i] += (v0[b][i] - v1[i]) / B
    new_w = [[w[j][i] + lr * dw[j][i] for i in range(n_v)] for j in range(n_h)]
    return new_w, [vb[i] + lr * dvb[i] for i in range(n_v)], [hb[j] + lr * dhb[j] for j in range(n_h)]


def test_cd1_matches_scalar_hand_trace():
    w = [[0.2, -0.4, 0.1], [0.5, 0.3, -0.2]]
    vb, hb = [0.1, 0.0, -0.1], [0.05, -0.05]
    v0 = [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    layer = RbmLayer(np.array(w), np.array(vb), np.array(hb))
    new = rbm_cd1_update(layer, np.array(v0), 0.3, np.random.default_rng(17))
    uniforms = np.random.default_rng(17).random((2, 2)).tolist()
    ew, evb, ehb = _cd1_oracle(w, vb, hb, v0, uniforms, 0.3)
    np.testing.assert_allclose(new.weights, ew, rtol=0, atol=1e-12)
    np.testing.assert_allclose(new.visible_bias, evb, rtol=0, atol=1e-12)
    np.testing.assert_allclose(new.hidden_bias, ehb, rtol=0, atol=1e-12)
    assert new.updates == 1
    # the input layer is untouched
    np.testing.assert_array_equal(layer.weights, w)


def test_zero_weight_rbm_hidden_probabilities_are_half():
    layer = RbmLayer(np.zeros((4, 6)), np.zeros(6), np.zeros(4))
    np.testing.assert_array_equal(layer.hidden_probs(make_rng(0).random((3, 6))), np.full((3, 4), 0.5))


def test_cd1_zero_input_has_no_positive_phase():
    layer = RbmLayer(make_rng(1).normal(size=(3, 5)), np.zeros(5), np.zeros(3))
    v0 = np.zeros((4, 5))
    new = rbm_cd1_update(layer, v0, 0.1, np.random.default_rng(3))
    # recompute the negative phase alone with the same hidden sample
    h0 = layer.hidden_probs(v0)
    hs = (np.random.default_rng(3).random(h0.shape) < h0).astype(float)
    v1 = layer.visible_probs(hs)
    h1 = layer.hidden_probs(v1)
    np.testing.assert_allclose(new.weights - layer.weights, -0.1 * h1.T @ v1 / 4, atol=1e-15)
    np.testing.assert_allclose(new.visible_bias, -0.1 * v1.mean(axis=0), atol=1e-15)


def test_cd1_rejects_non_positive_rate():
    layer = RbmLayer(np.zeros((2, 2)), np.zeros(2), np.zeros(2))
    for lr in (0.0, -0.1):
        with pytest.raises(ConfigError):
            rbm_cd1_update(layer, np.ones((1, 2)), lr, make_rng(0))


def _ae(seed, n_in=20, n_hidden=12):
    rng = make_rng(seed)
    return AutoencoderLayer.init(DenseLayer.init(n_in, n_hidden, rng), rng)


def test_autoencoder_zero_rate_leaves_parameters_unchanged():
    ae = _ae(0)
    before = {k: v.copy() for k, v in ae.net.params().items()}
    autoencoder_layer_update(ae, make_rng(1).random((9, 20)), 0.0)
    for key, value in ae.net.params().items():
        np.testing.assert_array_equal(value, before[key])
    assert ae.updates == 1


def test_autoencoder_gradients_match_finite_differences():
    ae = _ae(2, 7, 4)
    x = make_rng(3).random((5, 7))
    grads = ae.gradients(x)
    params = ae.net.params()
    for key, g in grads.items():
        for index in np.ndindex(g.shape):
            fd = finite_difference(lambda: ae.reconstruction_error(x), params[key], index)
            assert rel_err(g[index], fd) <= 1e-4, (key, index)


def test_autoencoder_reconstruction_error_decreases():
    x = make_rng(99).random((9, 20))
    ratios = []
    for seed in range(10):
        ae = _ae(seed)
        start = ae.reconstruction_error(x)
        for _ in range(100):
            autoencoder_layer_update(ae, x, 0.02)
        ratios.append(ae.reconstruction_error(x) / start)
    assert np.median(ratios) < 1.0


def test_decoder_must_mirror_encoder():
    rng = make_rng(0)
    with pytest.raises(ConfigError):
        AutoencoderLayer(DenseLayer.init(5, 3, rng), DenseLayer.init(3, 4, rng))


def _counting_source(seed, width=20):
    rng = make_rng(seed)
    calls = []

    def next_batch():
        calls.append(1)
        return rng.random((9, width))

    return next_batch, calls


@pytest.mark.parametrize("mode", ["autoencoder", "rbm"])
def test_each_layer_consumes_exactly_its_iterations(mode):
    next_batch, calls = _counting_source(0)
    stack = greedy_pretrain([20, 10, 6], next_batch, PretrainSchedule(mode, 0.05, 1500), make_rng(1))
    assert len(calls) == 2 * 1500
    assert [t.updates for t in stack.trainers] == [1500, 1500]
    assert stack.encode(np.zeros((1, 20))).shape == (1, 6)


def test_mode_none_equals_fresh_initialisation():
    next_batch, calls = _counting_source(0)
    stack = greedy_pretrain([20, 10, 6], next_batch, PretrainSchedule("none"), make_rng(4))
    rng = make_rng(4)
    fresh = [DenseLayer.init(20, 10, rng), DenseLayer.init(10, 6, rng)]
    for got, want in zip(stack.encoders, fresh):
        np.testing.assert_array_equal(got.weights, want.weights)
        np.testing.assert_array_equal(got.biases, want.biases)
    assert calls == [] and stack.decoders() == [None, None]


def test_rbm_and_autoencoder_give_different_weights():
    results = []
    for mode, lr in (("rbm", 0.3), ("autoencoder", 0.02)):
        next_batch, _ = _counting_source(5)
        results.append(greedy_pretrain([20, 10], next_batch, PretrainSchedule(mode, lr, 50), make_rng(6)))
    assert not np.array_equal(results[0].encoders[0].weights, results[1].encoders[0].weights)


def test_greedy_stack_matches_layer_by_layer_replay():
    sched = PretrainSchedule("autoencoder", 0.02, 30)
    next_batch, _ = _counting_source(7)
    stack = greedy_pretrain([20, 10, 4], next_batch, sched, make_rng(8))

    # replay: layer 1 trains to completion on raw batches, then layer 2
    # trains on batches encoded by the finished layer 1
    replay, _ = _counting_source(7)
    rng = make_rng(8)
    first, second = DenseLayer.init(20, 10, rng), DenseLayer.init(10, 4, rng)
    train_layer(first, replay, sched, rng)
    train_layer(second, lambda: first.activate(replay()), sched, rng)
    for got, want in zip(stack.encoders, (first, second)):
        np.testing.assert_array_equal(got.weights, want.weights)
        np.testing.assert_array_equal(got.biases, want.biases)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        PretrainSchedule("pca")
    with pytest.raises(ConfigError):
        greedy_pretrain([20], lambda: None, PretrainSchedule(), make_rng(0))


def _joint_source(seed, width=12):
    rng = make_rng(seed)

    def next_batch():
        return rng.random((9, width)), rng.integers(1, 10, size=9)

    return next_batch


def _targets(seed):
    rng = make_rng(seed)
    return rng.random((9, 20)), rng.random((9, 20))


def test_joint_pretraining_zero_iterations_preserves_init():
    right, left = _targets(0)
    enc = DenseLayer.init(52, 16, make_rng(1))
    before = enc.weights.copy()
    ae = pretrain_association_joint(_joint_source(2), right, left, enc,
                                    PretrainSchedule("autoencoder", 0.04, 0), make_rng(3))
    np.testing.assert_array_equal(enc.weights, before)
    assert ae.updates == 0


def test_joint_pretraining_width_and_target_checks():
    right, left = _targets(0)
    with pytest.raises(ConfigError, match="fan_in"):
        pretrain_association_joint(_joint_source(2), right, left, DenseLayer.init(50, 16, make_rng(1)),
                                   PretrainSchedule("autoencoder", 0.04, 1), make_rng(3))
    with pytest.raises(ConfigError, match="targets"):
        pretrain_association_joint(_joint_source(2), None, left, DenseLayer.init(52, 16, make_rng(1)),
                                   PretrainSchedule("autoencoder", 0.04, 1), make_rng(3))


def test_joint_pretraining_beats_random_reconstruction():
    right, left = _targets(0)
    ratios = []
    for seed in range(10):
        source = _joint_source(100)
        visual, numbers = source()
        x = np.concatenate([visual, right[numbers - 1], left[numbers - 1]], axis=1)
        untrained = AutoencoderLayer.init(DenseLayer.init(52, 16, make_rng(seed)), make_rng(seed, "dec"))
        enc = DenseLayer.init(52, 16, make_rng(seed))
        ae = pretrain_association_joint(_joint_source(seed), right, left, enc,
                                        PretrainSchedule("autoencoder", 0.04, 300), make_rng(seed, "dec"))
        ratios.append(ae.reconstruction_error(x) / untrained.reconstruction_error(x))
    assert np.median(ratios) < 1.0
