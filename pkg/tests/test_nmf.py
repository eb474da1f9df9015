import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatsep.nmf import (Activations, InferenceConfig, NmfModel, nmf_discriminative_finetune,
                         nmf_infer_joint, nmf_infer_multires, nmf_train, normalize_frames,
                         objective, reconstruct_sources, unrolled_loss)
from scatsep.transforms.scattering import FeatureMap

LONG = InferenceConfig(max_iters=10000, rel_tol=1e-15)


def separable_problem(rng, m=12, q=3, n=60):
    """Exact ``D0 @ Z0`` with anchor rows and pure frames, so the factors are identifiable."""
    d0 = 0.3 * rng.random((m, q))
    d0[:q] = np.eye(q)
    z0 = rng.random((q, n))
    z0[:, :q] = np.eye(q)
    return d0, z0


def _monotone(h, slack=1e-9):
    # relative slack, plus double-precision resolution of the starting objective
    # for exact fits whose objective reaches ~1e-24
    return np.all(np.diff(h) <= slack * np.abs(h[:-1]) + 1e-15 * abs(h[0]))


# ---- training ---------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(2, 20), n=st.integers(1, 30),
       q=st.integers(1, 8), lam=st.sampled_from([0.0, 0.01, 0.1, 1.0]))
def test_train_objective_monotone(seed, m, n, q, lam):
    v = np.random.default_rng(seed).random((m, n))
    model, h = nmf_train(v, q, lam, InferenceConfig(max_iters=60, rel_tol=1e-12), seed=seed,
                         return_history=True)
    assert _monotone(h)
    assert np.all(model.dictionary >= 0)
    np.testing.assert_allclose(np.linalg.norm(model.dictionary, axis=0), 1.0, atol=1e-9)


def test_exact_recovery(rng):
    d0, z0 = separable_problem(rng)
    v = d0 @ z0
    model, h = nmf_train(v, 3, 0.0, LONG, seed=0, return_history=True)
    vn, _ = normalize_frames(v)
    assert h[-1] < 1e-6 * np.sum(vn ** 2)
    # recovered atoms match the generating ones up to order
    d0n = d0 / np.linalg.norm(d0, axis=0)
    match = d0n.T @ model.dictionary
    assert np.all(match.max(axis=1) > 0.999)


def test_rank_one():
    v = np.array([[3.0], [4.0], [0.5]])
    model = nmf_train(v, 1, 0.0, InferenceConfig(max_iters=500, rel_tol=1e-15))
    np.testing.assert_allclose(model.dictionary[:, 0], v[:, 0] / np.linalg.norm(v), atol=1e-6)


def test_train_reproducible(rng):
    v = rng.random((10, 40))
    a = nmf_train(v, 4, 0.1, seed=3).dictionary
    b = nmf_train(v, 4, 0.1, seed=3).dictionary
    c = nmf_train(v, 4, 0.1, seed=4).dictionary
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_train_errors(rng):
    with pytest.raises(ValueError, match="empty"):
        nmf_train([], 2)
    with pytest.raises(ValueError, match="row counts"):
        nmf_train([rng.random((4, 3)), rng.random((5, 3))], 2)
    with pytest.raises(ValueError):
        nmf_train(rng.random((4, 3)), 0)
    with pytest.raises(ValueError):
        nmf_train(-rng.random((4, 3)), 2)
    with pytest.raises(ValueError):
        InferenceConfig(max_iters=0)
    with pytest.raises(ValueError):
        InferenceConfig(rel_tol=0.0)


def test_model_keeps_descriptor(rng):
    fm = FeatureMap(rng.random((5, 20)), 64, 1, [f"b{i}" for i in range(5)])
    model = nmf_train([fm], 2, 0.1)
    assert model.descriptor == fm.descriptor()
    assert model.bin_labels == fm.bin_labels
    assert (model.n_rows, model.n_atoms) == (5, 2)


def test_model_validation():
    with pytest.raises(ValueError):
        NmfModel(-np.ones((3, 2)), 0.1)
    with pytest.raises(ValueError):
        NmfModel(np.ones((3, 0)), 0.1)
    with pytest.raises(ValueError):
        Activations(-np.ones((2, 2)))


# ---- joint inference --------------------------------------------------------


def _unit(d):
    return d / np.linalg.norm(d, axis=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.sampled_from([0.0, 0.1, 1.0]))
def test_infer_objective_monotone(seed, lam):
    rng = np.random.default_rng(seed)
    m1 = NmfModel(_unit(rng.random((8, 3))), lam)
    m2 = NmfModel(_unit(rng.random((8, 4))), lam)
    *_, h = nmf_infer_joint(rng.random((8, 15)), m1, m2,
                            InferenceConfig(max_iters=80, rel_tol=1e-14), return_history=True)
    assert _monotone(h)


def test_orthogonal_atoms():
    m = 6
    eye = np.eye(m)
    m1 = NmfModel(eye[:, :3], 0.0)
    m2 = NmfModel(eye[:, 3:], 0.0)
    v = 2.5 * eye[:, [1]]
    z1, z2 = nmf_infer_joint(v, m1, m2, InferenceConfig(max_iters=200))
    assert np.linalg.norm(z2.absolute()) < 1e-3 * np.linalg.norm(z1.absolute())
    np.testing.assert_allclose(z1.absolute()[:, 0], [0, 2.5, 0], atol=1e-6)


def test_zero_mixture_column(rng):
    m1 = NmfModel(_unit(rng.random((5, 3))), 0.1)
    m2 = NmfModel(_unit(rng.random((5, 3))), 0.1)
    v = rng.random((5, 4))
    v[:, 2] = 0.0
    z1, z2 = nmf_infer_joint(v, m1, m2)
    assert np.all(z1.absolute()[:, 2] < 1e-20)
    assert np.all(z2.absolute()[:, 2] < 1e-20)


def test_identical_dictionaries_symmetric(rng):
    d = _unit(rng.random((7, 4)))
    z1, z2 = nmf_infer_joint(rng.random((7, 9)), NmfModel(d, 0.1), NmfModel(d.copy(), 0.1))
    np.testing.assert_allclose(z1.values, z2.values, rtol=0, atol=1e-9)


@pytest.mark.parametrize("normalize", [True, False])
def test_scale_homogeneity(rng, normalize):
    m1 = NmfModel(_unit(rng.random((6, 3))), 0.0)
    m2 = NmfModel(_unit(rng.random((6, 2))), 0.0)
    v = rng.random((6, 10))
    cfg = InferenceConfig(max_iters=50, rel_tol=1e-14, frame_normalize=normalize)
    a1, a2 = nmf_infer_joint(v, m1, m2, cfg)
    b1, b2 = nmf_infer_joint(7.0 * v, m1, m2, cfg)
    np.testing.assert_allclose(b1.absolute(), 7.0 * a1.absolute(), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b2.absolute(), 7.0 * a2.absolute(), rtol=1e-9, atol=1e-12)


def test_exact_mixture_reconstruction(rng):
    d0, z0 = separable_problem(rng, m=10, q=4, n=40)
    d0 = _unit(d0)
    m1, m2 = NmfModel(d0[:, :2], 0.0), NmfModel(d0[:, 2:], 0.0)
    v = d0 @ z0
    z1, z2 = nmf_infer_joint(v, m1, m2, LONG)
    e1, e2 = reconstruct_sources(z1, z2, m1, m2)
    assert np.linalg.norm(e1.values + e2.values - v) < 1e-3 * np.linalg.norm(v)


def test_descriptor_mismatch(rng):
    fm = FeatureMap(rng.random((5, 8)), 64, 1)
    m1 = NmfModel(_unit(rng.random((5, 2))), 0.1, {"level": 2, "stride": 128, "rows": 5})
    m2 = NmfModel(_unit(rng.random((5, 2))), 0.1, {"level": 2, "stride": 128, "rows": 5})
    with pytest.raises(ValueError, match="descriptor"):
        nmf_infer_joint(fm, m1, m2)
    with pytest.raises(ValueError, match="rows"):
        nmf_infer_joint(rng.random((6, 8)), NmfModel(np.ones((5, 1)), 0.1),
                        NmfModel(np.ones((5, 1)), 0.1))


# ---- reconstruction ---------------------------------------------------------


def test_reconstruct_examples(rng):
    d = _unit(rng.random((4, 3)))
    m1, m2 = NmfModel(d, 0.1), NmfModel(d[:, :1], 0.1)
    z1 = Activations(np.zeros((3, 5)))
    z2 = Activations(np.zeros((1, 5)))
    z2.values[0, 2] = 3.0
    e1, e2 = reconstruct_sources(z1, z2, m1, m2)
    np.testing.assert_array_equal(e1.values, 0.0)
    np.testing.assert_allclose(e2.values[:, 2], 3.0 * d[:, 0])
    with pytest.raises(ValueError):
        reconstruct_sources(z2, z2, m1, m2)


# ---- multi-resolution -------------------------------------------------------


def test_multires_levels_independent(rng):
    pair1 = (NmfModel(_unit(rng.random((6, 3))), 0.1), NmfModel(_unit(rng.random((6, 3))), 0.1))
    pair2 = (NmfModel(_unit(rng.random((9, 4))), 0.1), NmfModel(_unit(rng.random((9, 4))), 0.1))
    f1 = rng.random((6, 10))
    out = nmf_infer_multires([f1, np.zeros((9, 5))], [pair1, pair2])
    ref = nmf_infer_joint(f1, *pair1)
    np.testing.assert_array_equal(out[0][0].values, ref[0].values)
    np.testing.assert_array_equal(out[0][1].values, ref[1].values)
    assert np.all(out[1][0].absolute() < 1e-20)
    one = nmf_infer_multires([f1], [pair1])
    np.testing.assert_array_equal(one[0][0].values, ref[0].values)
    with pytest.raises(ValueError, match="levels"):
        nmf_infer_multires([f1, f1], [pair1])


def test_multires_exact_levels(rng):
    res = []
    feats, models = [], []
    for m, q in ((10, 4), (14, 6)):
        d0, z0 = separable_problem(rng, m, q, 30)
        d0 = _unit(d0)
        feats.append(d0 @ z0)
        models.append((NmfModel(d0[:, :q // 2], 0.0), NmfModel(d0[:, q // 2:], 0.0)))
    for (z1, z2), (m1, m2), v in zip(nmf_infer_multires(feats, models, LONG), models, feats):
        e1, e2 = reconstruct_sources(z1, z2, m1, m2)
        res.append(np.linalg.norm(e1.values + e2.values - v) / np.linalg.norm(v))
    assert max(res) < 1e-3


# ---- discriminative fine-tuning ---------------------------------------------


def test_unrolled_gradient_matches_finite_differences(rng):
    d = _unit(rng.random((6, 4)) + 0.1)
    v = rng.random((6, 5))
    v1, v2 = 0.6 * v, 0.4 * v
    lam = 0.05
    _, grad = unrolled_loss(d, v, v1, v2, 2, lam, 3, alpha=0.7)
    num = np.zeros_like(d)
    h = 1e-5
    for idx in np.ndindex(d.shape):
        dp, dm = d.copy(), d.copy()
        dp[idx] += h
        dm[idx] -= h
        num[idx] = (unrolled_loss(dp, v, v1, v2, 2, lam, 3, 0.7, with_grad=False)
                    - unrolled_loss(dm, v, v1, v2, 2, lam, 3, 0.7, with_grad=False)) / (2 * h)
    assert np.max(np.abs(grad - num)) / np.max(np.abs(num)) < 1e-4


def _finetune_data(rng, n_mix=3):
    out = []
    for _ in range(n_mix):
        s1, s2 = rng.random((6, 8)), rng.random((6, 8))
        out.append((s1 + s2, s1, s2))
    return out


def test_finetune_loss_non_increasing(rng):
    m1 = NmfModel(_unit(rng.random((6, 3))), 0.1)
    m2 = NmfModel(_unit(rng.random((6, 3))), 0.1)
    res = nmf_discriminative_finetune(m1, m2, _finetune_data(rng), n_unroll=5,
                                      step_size=0.05, epochs=15)
    assert np.all(np.diff(res.losses) <= 0)
    assert res.losses[-1] < res.losses[0]
    for model in res.models:
        assert np.all(model.dictionary >= 0)
        np.testing.assert_allclose(np.linalg.norm(model.dictionary, axis=0), 1.0)


def test_finetune_zero_step_bit_exact(rng):
    m1 = NmfModel(_unit(rng.random((6, 3))), 0.1)
    m2 = NmfModel(_unit(rng.random((6, 2))), 0.1)
    res = nmf_discriminative_finetune(m1, m2, _finetune_data(rng), step_size=0.0)
    np.testing.assert_array_equal(res.models[0].dictionary, m1.dictionary)
    np.testing.assert_array_equal(res.models[1].dictionary, m2.dictionary)


def test_finetune_errors(rng):
    m1 = NmfModel(_unit(rng.random((6, 3))), 0.1)
    with pytest.raises(ValueError, match="unrolled"):
        nmf_discriminative_finetune(m1, m1, _finetune_data(rng), n_unroll=0)
    with pytest.raises(ValueError, match="mixtures"):
        nmf_discriminative_finetune(m1, m1, [])
    bad = [(np.full((6, 4), np.inf), np.ones((6, 4)), np.ones((6, 4)))]
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        nmf_discriminative_finetune(m1, m1, bad, step_size=0.1, epochs=1)


def test_objective_scale_invariance(rng):
    v, d, z = rng.random((5, 6)), rng.random((5, 3)), rng.random((3, 6))
    c = np.array([2.0, 0.5, 3.0])
    np.testing.assert_allclose(objective(v, d * c, z / c[:, None], 0.3), objective(v, d, z, 0.3))
