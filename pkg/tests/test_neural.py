import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatsep.audio import AudioClip, mix_at_0db
from scatsep.neural import (ARCHS, ConvNetwork, Example, TrainConfig, _batches, build_network,
                            dataset_loss, input_width, loss_and_grad, make_example,
                            network_inputs, predict_masks, train)
from scatsep.pipeline import FeatureSettings, build_for, train_dnn
from scatsep.toy import TOY_DATASETS, toy_clip
from scatsep.transforms.scattering import scatter_layer1

SR = 16000


def test_cqt_dnn_shapes():
    net = build_network("cqt-dnn", 175)
    dims = [(l.n_in, l.n_out) for l in net.layers]
    assert dims == [(175, 512), (512, 150), (150, 350)]


def test_cqt_dnn_5_input_width():
    net = build_network("cqt-dnn-5", 175)
    assert net.input_width == 5 * 175
    assert [l.n_out for l in net.trunk] == [1024, 512]


def test_multi_resolution_shapes():
    dnn = build_network("dnn-multi", 161, J2=5)
    assert dnn.input_width == 160 * 6
    cnn = build_network("cnn-multi", 161, J2=5, branch_width=16)
    assert isinstance(cnn, ConvNetwork)
    assert len(cnn.branches) == 6
    assert all(b.n_in == 3 * 161 for b in cnn.branches)
    assert cnn.trunk[0].n_in == 6 * 16


def test_build_from_descriptor():
    net = build_network("cqt-dnn", {"level": 1, "rows": 20, "stride": 64})
    assert net.n_bins == 20
    with pytest.raises(ValueError, match="layer-1"):
        build_network("cqt-dnn", {"level": 2, "rows": 20})


def test_build_errors():
    with pytest.raises(ValueError, match="unknown arch"):
        build_network("rnn", 10)
    with pytest.raises(ValueError):
        build_network("cqt-dnn", 1)


def test_seeded_init_is_reproducible():
    a = build_network("cqt-dnn", 30, seed=5).params()
    b = build_network("cqt-dnn", 30, seed=5).params()
    c = build_network("cqt-dnn", 30, seed=6).params()
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], c[0])


def test_zero_weights_give_half():
    net = build_network("cqt-dnn", 12, hidden=(8,))
    for p in net.params():
        p[...] = 0.0
    masks = net.forward(np.random.default_rng(0).random((4, 12)))
    np.testing.assert_array_equal(masks, 0.5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), arch=st.sampled_from(sorted(ARCHS)))
def test_masks_partition(seed, arch):
    rng = np.random.default_rng(seed)
    net = build_network(arch, 9, seed=seed, J2=2, hidden=(7, 5), branch_width=4)
    for p in net.params():
        p += rng.normal(0, 1, p.shape)
    masks = net.forward(rng.normal(0, 3, (6, net.input_width)))
    assert masks.shape == (6, 2, 9)
    assert np.all((masks >= 0) & (masks <= 1))
    np.testing.assert_allclose(masks.sum(axis=1), 1.0, atol=1e-6)


def test_forward_shape_check():
    net = build_network("cqt-dnn", 12)
    with pytest.raises(ValueError, match="expected inputs"):
        net.forward(np.ones((3, 11)))


def test_input_width_matches_network_inputs(fb, rng):
    layer1 = scatter_layer1(AudioClip(rng.standard_normal(6000), SR), fb)
    for arch in ARCHS:
        net = build_network(arch, fb.n_outputs, J2=3, hidden=(4,), branch_width=4)
        x = network_inputs(net, layer1)
        assert x.shape == (layer1.n_frames, input_width(arch, fb.n_outputs, 3))
        assert np.all(np.isfinite(x))


def test_inputs_are_scale_invariant(fb, rng):
    x = rng.standard_normal(5000)
    net = build_network("cqt-dnn", fb.n_outputs)
    a = network_inputs(net, scatter_layer1(AudioClip(x, SR), fb))
    b = network_inputs(net, scatter_layer1(AudioClip(40.0 * x, SR), fb))
    np.testing.assert_allclose(a, b, rtol=1e-9)


# ---- gradients --------------------------------------------------------------


def _random_batch(net, rng, n=6):
    x = rng.normal(0, 1, (n, net.input_width))
    mix = rng.random((n, net.n_bins)) + 0.1
    if net.spec.loss == "mask":
        t = rng.random((n, net.n_bins))
        targets = np.stack([t, 1 - t], axis=1)
    else:
        targets = rng.random((n, 2, net.n_bins)) * mix[:, None, :]
    return x, mix, targets


@pytest.mark.parametrize("arch", sorted(ARCHS))
def test_backprop_matches_finite_differences(arch):
    rng = np.random.default_rng(7)
    net = build_network(arch, 4, seed=3, J2=2, hidden=(3,), branch_width=3)
    x, mix, targets = _random_batch(net, rng, n=8)

    def loss():
        return loss_and_grad(net, net.forward(x), mix, targets, with_grad=False)

    masks, state = net.forward(x, keep=True)
    _, g_masks = loss_and_grad(net, masks, mix, targets)
    grads = net.backward(masks, state, g_masks)
    h = 1e-6
    worst = 0.0
    for p, g in zip(net.params(), grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        scale = max(np.max(np.abs(num)), 1e-12)
        worst = max(worst, np.max(np.abs(g - num)) / scale)
    assert worst < 1e-4


# ---- training ---------------------------------------------------------------


def _toy_examples(fb, net, n=2, seconds=0.5, seed=0):
    rng = np.random.default_rng(seed)
    c1, c2 = TOY_DATASETS["bands"]
    out = []
    for _ in range(n):
        y, a, b = mix_at_0db(toy_clip(c1, seconds, SR, rng), toy_clip(c2, seconds, SR, rng))
        out.append(make_example(net, *(scatter_layer1(s, fb) for s in (y, a, b))))
    return out


def test_zero_learning_rate_keeps_weights(fb):
    net = build_network("cqt-dnn", fb.n_outputs, hidden=(16,))
    before = [p.copy() for p in net.params()]
    train(net, _toy_examples(fb, net), TrainConfig(learning_rate=0.0, epochs=2))
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("arch", ["cqt-dnn", "dnn-multi"])
def test_zero_momentum_is_plain_gradient_descent(fb, arch):
    cfg = TrainConfig(learning_rate=0.05, momentum=0.0, batch_size=16, epochs=2, seed=4)
    net = build_for(arch, FeatureSettings(mode="haar" if arch == "dnn-multi" else "scatt1"),
                    hidden=(8,))
    ref = build_for(arch, FeatureSettings(mode="haar" if arch == "dnn-multi" else "scatt1"),
                    hidden=(8,))
    examples = _toy_examples(fb, net)
    train(net, examples, cfg)
    rng = np.random.default_rng(cfg.seed)
    params = ref.params()
    for _ in range(cfg.epochs):
        for idx in _batches(examples, ref, cfg, rng):
            x = np.array([examples[i].inputs[r] for i, r in idx])
            mix = np.array([examples[i].mixture[r] for i, r in idx])
            tgt = np.array([examples[i].targets[r] for i, r in idx])
            masks, state = ref.forward(x, keep=True)
            _, g = loss_and_grad(ref, masks, mix, tgt)
            for p, gp in zip(params, ref.backward(masks, state, g)):
                p -= cfg.learning_rate * gp
    for a, b in zip(net.params(), params):
        np.testing.assert_array_equal(a, b)


def test_training_is_reproducible(fb):
    results = []
    for _ in range(2):
        net = build_network("cqt-dnn", fb.n_outputs, hidden=(16,), seed=2)
        results.append(train(net, _toy_examples(fb, net), TrainConfig(epochs=2, seed=9)))
    np.testing.assert_array_equal(results[0].losses, results[1].losses)
    for a, b in zip(results[0].network.params(), results[1].network.params()):
        np.testing.assert_array_equal(a, b)


def test_train_errors():
    net = build_network("cqt-dnn", 4)
    with pytest.raises(ValueError, match="empty"):
        train(net, [])
    empty = Example(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros((0, 2, 4)))
    with pytest.raises(ValueError, match="empty"):
        train(net, [empty])
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


def test_non_finite_loss_aborts(fb):
    net = build_network("cqt-dnn", fb.n_outputs, hidden=(4,))
    ex = _toy_examples(fb, net, n=1)[0]
    ex.targets[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite"):
        train(net, [ex], TrainConfig(epochs=1))


@pytest.mark.slow
def test_toy_training_learns_band_masks(fb):
    rng = np.random.default_rng(0)
    c1, c2 = TOY_DATASETS["bands"]
    mixtures = [mix_at_0db(toy_clip(c1, 1.0, SR, rng), toy_clip(c2, 1.0, SR, rng))
                for _ in range(3)]
    res = train_dnn(mixtures, "cqt-dnn", FeatureSettings(), TrainConfig(epochs=30, batch_size=32))
    assert res.losses[-1] < 0.5 * res.initial_loss
    y, _, _ = mix_at_0db(toy_clip(c1, 1.0, SR, rng), toy_clip(c2, 1.0, SR, rng))
    masks = predict_masks(res.network, scatter_layer1(y, fb))
    hz = fb.center_frequencies_hz()
    band1 = np.flatnonzero((hz > 300) & (hz < 1200)) + 1  # row 0 is the low-pass
    assert masks.m1[band1].mean() > 0.9
    np.testing.assert_allclose(masks.m1 + masks.m2, 1.0, atol=1e-12)


def test_dataset_loss_matches_mean(fb):
    net = build_network("cqt-dnn", fb.n_outputs, hidden=(8,))
    ex = _toy_examples(fb, net, n=1)[0]
    masks = net.forward(ex.inputs)
    direct = np.mean((masks - ex.targets) ** 2)
    np.testing.assert_allclose(dataset_loss(net, [ex], batch_size=10 ** 6), direct)
