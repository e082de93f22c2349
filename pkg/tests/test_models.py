import numpy as np
import pytest

from conftest import finite_difference, rel_err
from subitizer import embodiment as emb
from subitizer.errors import ConfigError, DataError
from subitizer.models import (
    CHECKPOINT_HEADER,
    Widths,
    baseline_network,
    build_baseline,
    build_extended,
    checkpoint_text,
    extended_network,
    extract_hand_targets,
    forward_baseline,
    forward_extended,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from subitizer.nn import DenseLayer, cross_entropy_grad, loss_cross_entropy, loss_mse, make_rng, mse_grad

SMALL = Widths(visual=6, association=8, visuomotor=8)
FAST = 60  # pre-training updates per layer where the count does not matter


@pytest.fixture(scope="module")
def batch(table):
    return emb.gen_epoch(emb.NumberDistribution.uniform(), make_rng(0), table, 2)


@pytest.fixture(scope="module")
def both_ae(table):
    return build_baseline("both", SMALL, "autoencoder", 3, table, pretrain_iterations=FAST)


def _check_gradients(net, inputs, heads):
    """``heads`` maps layer name -> (loss_fn, grad_fn, target)."""

    def total():
        acts = net.forward(inputs).activations
        return sum(loss(acts[h], t) for h, (loss, _, t) in heads.items())

    cache = net.forward(inputs)
    grads = net.backward(cache, {h: g(cache.activations[h], t) for h, (_, g, t) in heads.items()})
    params = net.params()
    assert set(grads) == set(params)
    for key, g in grads.items():
        for index in np.ndindex(g.shape):
            fd = finite_difference(total, params[key], index)
            assert rel_err(g[index], fd) <= 1e-4, (key, index, g[index], fd)


@pytest.mark.parametrize("modules", ["visual", "motor", "both"])
def test_baseline_gradients_match_finite_differences(modules, batch):
    net = baseline_network(modules, SMALL, make_rng(1))
    inputs = {k: v[:3] for k, v in batch.inputs().items() if k in net.input_sizes}
    _check_gradients(net, inputs, {"competitive": (loss_cross_entropy, cross_entropy_grad, batch.onehot[:3])})


def test_extended_multi_head_gradients_match_finite_differences(batch):
    net = extended_network(SMALL, make_rng(2))
    rng = make_rng(3)
    heads = {
        "competitive": (loss_cross_entropy, cross_entropy_grad, batch.onehot[:3]),
        "right_hand": (loss_mse, mse_grad, rng.random((3, 20))),
        "left_hand": (loss_mse, mse_grad, rng.random((3, 20))),
    }
    _check_gradients(net, {"visual": batch.scenes[:3]}, heads)


def test_visual_only_baseline_has_no_motor_branch(batch):
    net = baseline_network("visual", Widths(), make_rng(0))
    assert set(net.layers) == {"visual_hidden", "association", "competitive"}
    assert net.layers["association"].fan_in == 60
    motor = baseline_network("motor", Widths(), make_rng(0))
    assert set(motor.layers) == {"right_hand", "left_hand", "association", "competitive"}
    assert motor.layers["association"].fan_in == 40


def test_pruned_branches_ignore_their_inputs(table, batch):
    model = build_baseline("visual", SMALL, "none", 0, table)
    other = emb.Batch(batch.scenes, 1 - batch.right, batch.left * 0, batch.targets)
    np.testing.assert_array_equal(forward_baseline(model, batch), forward_baseline(model, other))
    motor = build_baseline("motor", SMALL, "none", 0, table)
    shuffled = emb.Batch(batch.scenes[::-1], batch.right, batch.left, batch.targets)
    np.testing.assert_array_equal(forward_baseline(motor, batch), forward_baseline(motor, shuffled))


def test_baseline_outputs_are_distributions(table, batch):
    model = build_baseline("both", SMALL, "none", 0, table)
    probs = forward_baseline(model, batch)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    model.network.layers["competitive"].weights[...] = 0
    model.network.layers["competitive"].biases[...] = 0
    np.testing.assert_allclose(forward_baseline(model, batch), 1 / 9, atol=1e-15)


def test_learning_rates_and_provenance(table):
    model = build_baseline("both", SMALL, "autoencoder", 0, table, pretrain_iterations=1)
    assert model.provenance["pretrain_lr"] == 0.04
    assert model.provenance["final_lr"] == 0.11
    assert model.provenance["pretrain_mode"] == "autoencoder"
    assert build_baseline("visual", SMALL, "rbm", 0, table, pretrain_iterations=1).provenance["pretrain_lr"] == 0.3
    with pytest.raises(ConfigError):
        build_baseline("ears", SMALL, "none", 0, table)


def test_no_pretraining_is_reproducible(table):
    a = build_baseline("both", SMALL, "none", 5, table).network.params()
    b = build_baseline("both", SMALL, "none", 5, table).network.params()
    for key in a:
        np.testing.assert_array_equal(a[key], b[key])


def test_hand_targets(both_ae, table):
    targets = extract_hand_targets(both_ae, table)
    pairs = {tuple(np.concatenate([targets.right[i], targets.left[i]]).round(12)) for i in range(9)}
    assert len(pairs) == 9
    for side in (targets.right, targets.left):
        assert side.shape == (9, 20)
        assert np.all((side > 0) & (side < 1))
    again = extract_hand_targets(both_ae, table)
    np.testing.assert_array_equal(again.right, targets.right)
    with pytest.raises(ConfigError):
        extract_hand_targets(build_baseline("both", SMALL, "none", 0, table), table)
    with pytest.raises(ConfigError):
        extract_hand_targets(build_baseline("visual", SMALL, "autoencoder", 0, table, pretrain_iterations=1))


def test_weight_copy_is_bit_exact(both_ae, table):
    model = build_extended(SMALL, "weight_copy", 3, table, pretrain_iterations=FAST, pretrain_lr=0.04)
    src = both_ae.network.layers
    dst = model.network.layers
    dec = both_ae.decoders["association"]
    for name in ("visual_hidden", "association"):
        np.testing.assert_array_equal(dst[name].weights, src[name].weights)
        np.testing.assert_array_equal(dst[name].biases, src[name].biases)
    np.testing.assert_array_equal(dst["visuomotor"].weights, src["association"].weights[:, :6])
    np.testing.assert_array_equal(dst["right_hand"].weights, dec.weights[6:26])
    np.testing.assert_array_equal(dst["left_hand"].biases, dec.biases[26:])
    expected = extract_hand_targets(both_ae, table)
    np.testing.assert_array_equal(model.hand_targets.right, expected.right)


def test_weight_copy_shape_mismatch_is_diagnosed(table):
    with pytest.raises(ConfigError, match=r"cannot copy weights \(8, 6\)"):
        build_extended(Widths(6, 8, 5), "weight_copy", 0, table, pretrain_iterations=1)


def test_visual_part_only_copies_the_visual_baseline(table):
    model = build_extended(SMALL, "visual_part_only", 4, table, pretrain_iterations=FAST)
    vis = build_baseline("visual", SMALL, "autoencoder", 4, table, pretrain_lr=0.04, pretrain_iterations=FAST)
    dst, src = model.network.layers, vis.network.layers
    np.testing.assert_array_equal(dst["visual_hidden"].weights, src["visual_hidden"].weights)
    np.testing.assert_array_equal(dst["association"].weights[:, :6], src["association"].weights)
    np.testing.assert_array_equal(dst["association"].biases, src["association"].biases)


def test_full_pretrain_reconstructs_hand_targets_better_than_random(table):
    ratios = []
    for seed in range(10):
        model = build_extended(SMALL, "full_pretrain", seed, table, pretrain_iterations=300)
        fresh = build_extended(SMALL, "none", seed, table, pretrain_iterations=300)
        test = emb.gen_epoch(emb.NumberDistribution.uniform(), make_rng(seed, "probe"), table, 5)

        def error(m, decoder):
            layers = m.network.layers
            vis = layers["visual_hidden"].activate(test.scenes)
            right, left = m.hand_targets.for_numbers(test.targets)
            x = np.concatenate([vis, right, left], axis=1)
            return loss_mse(decoder.activate(layers["association"].activate(x)), x)

        random_decoder = DenseLayer.init(8, 46, make_rng(seed, "decoder"))
        ratios.append(error(model, model.decoders["association"]) / error(fresh, random_decoder))
    assert np.median(ratios) < 1.0


def test_extended_forward(table, batch):
    model = build_extended(SMALL, "none", 0, table, pretrain_iterations=1)
    probs, right, left = forward_extended(model, batch.scenes)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert right.shape == left.shape == (len(batch), 20)
    assert np.all((right > 0) & (right < 1))
    # the association layer reads exactly the activations the hand heads emit
    acts = model.network.forward({"visual": batch.scenes}).activations
    x = np.concatenate([acts["visual_hidden"], right, left], axis=1)
    np.testing.assert_array_equal(model.network.layers["association"].activate(x), acts["association"])
    with pytest.raises(ConfigError):
        build_extended(SMALL, "magic", 0, table)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, both_ae, table):
    model = build_extended(SMALL, "weight_copy", 3, table, pretrain_iterations=FAST)
    model.optimizer("number").step_count = 7
    model.optimizer("number").first_moment["x"] = np.array([0.1, 1e-300, -3.0])
    model.optimizer("number").second_moment["x"] = np.array([0.2, 5e-324, 2.0])
    path = save_checkpoint(model, tmp_path / "deep" / "dir" / "m.ckpt")
    loaded = load_checkpoint(path)
    for key, value in model.network.params().items():
        np.testing.assert_array_equal(loaded.network.params()[key], value)
    np.testing.assert_array_equal(loaded.hand_targets.left, model.hand_targets.left)
    np.testing.assert_array_equal(loaded.optimizers["number"].second_moment["x"],
                                  model.optimizers["number"].second_moment["x"])
    assert loaded.provenance == model.provenance
    assert checkpoint_text(loaded) == checkpoint_text(model)
    base = parse_checkpoint(checkpoint_text(both_ae))
    np.testing.assert_array_equal(base.decoders["association"].weights, both_ae.decoders["association"].weights)


def test_corrupt_checkpoints_raise_data_error(tmp_path, table):
    text = checkpoint_text(build_baseline("visual", SMALL, "none", 0, table))
    assert text.startswith(CHECKPOINT_HEADER + "\n")
    with pytest.raises(DataError, match="header"):
        parse_checkpoint("garbage\n{}")
    with pytest.raises(DataError, match="corrupt"):
        parse_checkpoint(text[: len(text) // 2])
    with pytest.raises(DataError, match="corrupt"):
        parse_checkpoint(text.replace('"softmax"', '"relu"', 1))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.ckpt")
