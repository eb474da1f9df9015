"""Sparse NMF: dictionary training, joint two-source inference and
discriminative fine-tuning through unrolled multiplicative updates.

All fits minimise

    F(D, Z) = 1/2 ||V - D Z||_F^2 + lam * sum_j ||d_j||_2 ||z_j||_1

on frame-normalised features ``V``.  With unit-norm columns this is the usual
``1/2 ||V - DZ||^2 + lam ||Z||_1``; the ``||d_j||`` factor makes the objective
invariant to the column renormalisation that follows each dictionary update,
so every half-step is monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .transforms.scattering import FeatureMap

EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class InferenceConfig:
    """Stopping rule and numerical floor for multiplicative updates.

    ``frame_normalize`` realises the per-frame weighting: every column is
    divided by ``||v|| + epsilon_floor`` before fitting.
    """

    max_iters: int = 100
    rel_tol: float = 1e-5
    epsilon_floor: float = EPS_FLOOR
    frame_normalize: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if not self.epsilon_floor > 0:
            raise ValueError("epsilon_floor must be > 0")


TRAIN_CONFIG = InferenceConfig(max_iters=200)


@dataclass
class NmfModel:
    """Unit-norm non-negative dictionary of one source at one feature level."""

    dictionary: np.ndarray
    sparsity: float
    descriptor: dict = field(default_factory=dict)
    bin_labels: list = field(default_factory=list)

    def __post_init__(self):
        d = np.asarray(self.dictionary, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] < 1:
            raise ValueError(f"dictionary must be m x q with q >= 1, got {d.shape}")
        if np.any(d < 0):
            raise ValueError("dictionary has negative entries")
        if self.sparsity < 0:
            raise ValueError("sparsity must be non-negative")
        self.dictionary = d

    @property
    def n_rows(self) -> int:
        return self.dictionary.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.dictionary.shape[1]


@dataclass
class Activations:
    """Non-negative activations on frame-normalised features.

    ``frame_scale`` holds the mixture column norms removed before fitting;
    ``absolute()`` restores them.
    """

    values: np.ndarray
    frame_scale: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0):
            raise ValueError("activations must be non-negative")

    def absolute(self) -> np.ndarray:
        if self.frame_scale is None:
            return self.values
        return self.values * self.frame_scale[None, :]


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureMap):
        return features.values
    return np.asarray(features, dtype=np.float64)


def normalize_frames(v: np.ndarray, eps: float = EPS_FLOOR):
    """Divide each column by its L2 norm (+eps). Returns ``(v_normalised, norms)``."""
    norms = np.linalg.norm(v, axis=0) + eps
    return v / norms[None, :], norms


def objective(v, d, z, lam) -> float:
    """Scale-invariant sparse NMF objective (``lam`` scalar or per-atom)."""
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (d.shape[1],))
    r = v - d @ z
    penalty = np.sum(lam * np.linalg.norm(d, axis=0) * z.sum(axis=1))
    return float(0.5 * np.sum(r * r) + penalty)


def _update_z(v, d, z, lam_col, eps):
    num = d.T @ v
    den = d.T @ (d @ z) + lam_col + eps
    return np.maximum(z * num / den, eps)


def _update_d(v, d, z, lam, eps):
    # majorise ||d_j|| by (||d_j||^2 + 1)/2 at unit-norm d_j
    zl1 = z.sum(axis=1)
    num = v @ z.T
    den = d @ (z @ z.T) + d * (lam * zl1)[None, :] + eps
    d = np.maximum(d * num / den, eps)
    norms = np.linalg.norm(d, axis=0)
    return d / norms[None, :], z * norms[:, None]


def _converged(prev: float, cur: float, rel_tol: float) -> bool:
    return abs(prev - cur) <= rel_tol * max(abs(prev), 1e-300)


def _training_matrix(features, eps, frame_normalize):
    mats = [_as_matrix(f) for f in features]
    if not mats or all(m.shape[1] == 0 for m in mats):
        raise ValueError("empty training set")
    rows = {m.shape[0] for m in mats}
    if len(rows) != 1:
        raise ValueError(f"feature maps have different row counts: {sorted(rows)}")
    v = np.hstack(mats)
    if np.any(v < 0):
        raise ValueError("training features must be non-negative")
    if frame_normalize:
        v, _ = normalize_frames(v, eps)
    return v


def nmf_train(features: Sequence, q: int, sparsity: float = 0.1,
              cfg: InferenceConfig = TRAIN_CONFIG, seed: int = 0,
              return_history: bool = False):
    """Learn a ``m x q`` dictionary from one source's feature maps.

    Alternates a Z-update and a D-update (followed by column renormalisation)
    until ``max_iters`` sweeps or a relative objective change below
    ``rel_tol``.  Returns the model, and the per-sweep objective if
    ``return_history``.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if sparsity < 0:
        raise ValueError("sparsity must be non-negative")
    if isinstance(features, (FeatureMap, np.ndarray)):
        features = [features]
    features = list(features)
    eps = cfg.epsilon_floor
    v = _training_matrix(features, eps, cfg.frame_normalize)
    m, n = v.shape

    rng = np.random.default_rng(seed)
    d = 1.0 - rng.random((m, q))  # uniform in (0, 1]
    d /= np.linalg.norm(d, axis=0)[None, :]
    z = 1.0 - rng.random((q, n))

    history = [objective(v, d, z, sparsity)]
    for _ in range(cfg.max_iters):
        z = _update_z(v, d, z, sparsity, eps)
        d, z = _update_d(v, d, z, sparsity, eps)
        history.append(objective(v, d, z, sparsity))
        if _converged(history[-2], history[-1], cfg.rel_tol):
            break

    first = features[0]
    descriptor, labels = {}, []
    if isinstance(first, FeatureMap):
        descriptor = first.descriptor()
        labels = list(first.bin_labels)
    model = NmfModel(d, float(sparsity), descriptor, labels)
    if return_history:
        return model, np.array(history)
    return model


def _check_pair(model1: NmfModel, model2: NmfModel, m: int):
    if model1.n_rows != model2.n_rows:
        raise ValueError("models have different row counts")
    if model1.n_rows != m:
        raise ValueError(f"features have {m} rows, models expect {model1.n_rows}")
    k1 = {k: v for k, v in model1.descriptor.items() if k != "sample_rate"}
    k2 = {k: v for k, v in model2.descriptor.items() if k != "sample_rate"}
    if k1 and k2 and k1 != k2:
        raise ValueError(f"models were trained on different features: {k1} vs {k2}")


def _stacked(model1, model2):
    d = np.hstack([model1.dictionary, model2.dictionary])
    lam = np.concatenate([np.full(model1.n_atoms, model1.sparsity),
                          np.full(model2.n_atoms, model2.sparsity)])
    return d, lam


def nmf_infer_joint(mix_features, model1: NmfModel, model2: NmfModel,
                    cfg: InferenceConfig = InferenceConfig(),
                    return_history: bool = False):
    """Activations of both sources on the stacked dictionary ``[D1 D2]``.

    Starts from a constant activation matrix so identical dictionaries give
    identical activations.  Returns ``(Z1, Z2)`` (plus the objective trace if
    ``return_history``).
    """
    v = _as_matrix(mix_features)
    if v.ndim != 2:
        raise ValueError("mixture features must be 2-D")
    if isinstance(mix_features, FeatureMap):
        desc = {k: val for k, val in mix_features.descriptor().items()
                if k != "sample_rate"}
        for mdl in (model1, model2):
            mine = {k: val for k, val in mdl.descriptor.items() if k != "sample_rate"}
            if mine and mine != desc:
                raise ValueError(f"feature descriptor {desc} does not match model {mine}")
    _check_pair(model1, model2, v.shape[0])
    eps = cfg.epsilon_floor
    scale = None
    if cfg.frame_normalize:
        v, scale = normalize_frames(v, eps)
    d, lam = _stacked(model1, model2)
    q = d.shape[1]
    z = np.full((q, v.shape[1]), 1.0 / q)
    lam_col = lam[:, None]

    history = [objective(v, d, z, lam)]
    for _ in range(cfg.max_iters):
        z = _update_z(v, d, z, lam_col, eps)
        history.append(objective(v, d, z, lam))
        if _converged(history[-2], history[-1], cfg.rel_tol):
            break
    q1 = model1.n_atoms
    out = (Activations(z[:q1], scale), Activations(z[q1:], scale))
    if return_history:
        return out + (np.array(history),)
    return out


def _model_feature_map(model: NmfModel, values: np.ndarray) -> FeatureMap:
    desc = model.descriptor
    return FeatureMap(values, desc.get("stride", 1), desc.get("level", 1),
                      list(model.bin_labels) or None, desc.get("sample_rate", 16000))


def reconstruct_sources(z1: Activations, z2: Activations, model1: NmfModel,
                        model2: NmfModel):
    """Feature estimates ``D_i Z_i`` on the mixture's absolute scale."""
    out = []
    for z, model in ((z1, model1), (z2, model2)):
        if z.values.shape[0] != model.n_atoms:
            raise ValueError("activations do not match the dictionary")
        out.append(_model_feature_map(model, model.dictionary @ z.absolute()))
    return tuple(out)


def nmf_infer_multires(pyramid_features: Sequence, models: Sequence,
                       cfg: InferenceConfig = InferenceConfig()):
    """Independent joint inference at every level; ``models[k] = (model1, model2)``."""
    if len(models) < len(pyramid_features):
        raise ValueError(
            f"{len(pyramid_features)} feature levels but models for {len(models)}")
    return [nmf_infer_joint(f, m1, m2, cfg)
            for f, (m1, m2) in zip(pyramid_features, models)]


# ---- discriminative fine-tuning -------------------------------------------


def unrolled_loss(d, v, v1, v2, q1, lam, n_steps, alpha=1.0, eps=EPS_FLOOR,
                  with_grad=True):
    """Loss of ``n_steps`` unrolled Z-updates and its gradient w.r.t. ``d``.

    ``d`` is the stacked dictionary ``[D1 D2]``; ``v`` the normalised mixture
    and ``v1``, ``v2`` the sources on the same scale.  Loss is
    ``1/2||v1 - D1 Z1||^2 + alpha/2 ||v2 - D2 Z2||^2``.
    """
    q = d.shape[1]
    lam_col = np.broadcast_to(np.asarray(lam, dtype=np.float64), (q,))[:, None]
    a = d.T @ v
    g = d.T @ d
    z = np.full((q, v.shape[1]), 1.0 / q)
    tape = []
    for _ in range(n_steps):
        b = g @ z + lam_col + eps
        raw = z * a / b
        tape.append((z, b, raw))
        z = np.maximum(raw, eps)

    d1, d2 = d[:, :q1], d[:, q1:]
    r1 = v1 - d1 @ z[:q1]
    r2 = v2 - d2 @ z[q1:]
    loss = 0.5 * np.sum(r1 * r1) + 0.5 * alpha * np.sum(r2 * r2)
    if not with_grad:
        return float(loss)

    grad = np.zeros_like(d)
    grad[:, :q1] -= r1 @ z[:q1].T
    grad[:, q1:] -= alpha * (r2 @ z[q1:].T)
    gz = np.vstack([-(d1.T @ r1), -alpha * (d2.T @ r2)])
    ga = np.zeros_like(a)
    gg = np.zeros_like(g)
    for z_prev, b, raw in reversed(tape):
        gz = gz * (raw > eps)
        ga += gz * z_prev / b
        gb = -gz * raw / b
        gg += gb @ z_prev.T
        gz = gz * a / b + g @ gb
    grad += v @ ga.T + d @ (gg + gg.T)
    return float(loss), grad


@dataclass
class FinetuneResult:
    models: tuple
    losses: np.ndarray  # loss of the accepted dictionaries, one per epoch (+ initial)


def _project_columns(d, fallback):
    d = np.maximum(d, 0.0)
    norms = np.linalg.norm(d, axis=0)
    dead = norms <= 0
    d[:, dead] = fallback[:, dead]
    norms[dead] = 1.0
    return d / norms[None, :]


def nmf_discriminative_finetune(model1: NmfModel, model2: NmfModel, mixtures,
                                alpha: float = 1.0, n_unroll: int = 10,
                                step_size: float = 1e-3, epochs: int = 20,
                                eps: float = EPS_FLOOR) -> FinetuneResult:
    """Projected gradient descent on both dictionaries through unrolled inference.

    ``mixtures`` yields ``(mix, src1, src2)`` feature matrices on a common
    grid; sources are scaled by the mixture's column norms.  A step is kept
    only if it lowers the total loss, otherwise the step size is halved, so
    the returned loss curve is non-increasing.
    """
    if n_unroll < 1:
        raise ValueError("the number of unrolled iterations must be >= 1")
    if step_size < 0:
        raise ValueError("step_size must be non-negative")
    _check_pair(model1, model2, model1.n_rows)
    batch = []
    for mix, s1, s2 in mixtures:
        mix, s1, s2 = (_as_matrix(a) for a in (mix, s1, s2))
        v, norms = normalize_frames(mix, eps)
        batch.append((v, s1 / norms[None, :], s2 / norms[None, :]))
    if not batch:
        raise ValueError("no training mixtures")

    d, lam = _stacked(model1, model2)
    q1 = model1.n_atoms

    def total(dd, with_grad=True):
        loss, grad = 0.0, np.zeros_like(dd)
        for v, v1, v2 in batch:
            if with_grad:
                lo, gr = unrolled_loss(dd, v, v1, v2, q1, lam, n_unroll, alpha, eps)
                grad += gr
            else:
                lo = unrolled_loss(dd, v, v1, v2, q1, lam, n_unroll, alpha, eps,
                                   with_grad=False)
            loss += lo
        return (loss, grad) if with_grad else loss

    loss, grad = total(d)
    losses = [loss]
    if step_size > 0:
        eta = step_size
        for epoch in range(epochs):
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite dictionary gradient at epoch {epoch}")
            cand = _project_columns(d - eta * grad, d)
            cand_loss = total(cand, with_grad=False)
            if cand_loss < loss:
                d = cand
                loss, grad = total(d)
                eta *= 1.5
            else:
                eta *= 0.5
            losses.append(loss)
    new1 = NmfModel(d[:, :q1].copy(), model1.sparsity, dict(model1.descriptor),
                    list(model1.bin_labels))
    new2 = NmfModel(d[:, q1:].copy(), model2.sparsity, dict(model2.descriptor),
                    list(model2.bin_labels))
    return FinetuneResult((new1, new2), np.array(losses))
