"""Mask-regression networks trained with mini-batch SGD and momentum.

Every network maps a context of mixture features to two non-negative head
vectors ``r1, r2`` (ReLU-rectified) and returns the masks
``(r_i + eps) / (r1 + r2 + 2 eps)``, one value per layer-1 row.

Architectures
-------------
cqt-dnn     one layer-1 frame, hidden (512, 150)
cqt-dnn-5   five concatenated layer-1 frames, hidden (1024, 512)
dnn-multi   Haar features of one frame, hidden (1024, 512)
cnn-multi   one dense branch per resolution ``2**j`` (three pooled frames
            each), concatenated into a (1024, 512) trunk

The ``cqt-*`` networks regress ideal masks; the ``*-multi`` networks are
trained on the error of the masked mixture features at every dyadic time
resolution.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .phase import MaskPair, soft_mask
from .transforms.scattering import ScatteringLayer, haar_features

HEAD_EPS = 1e-12
FRAME_EPS = 1e-12


@dataclass(frozen=True)
class ArchSpec:
    hidden: tuple
    inputs: str  # layer1 | haar | pooled
    loss: str  # mask | feature
    context: int = 1


ARCHS = {
    "cqt-dnn": ArchSpec((512, 150), "layer1", "mask", 1),
    "cqt-dnn-5": ArchSpec((1024, 512), "layer1", "mask", 5),
    "dnn-multi": ArchSpec((1024, 512), "haar", "feature"),
    "cnn-multi": ArchSpec((1024, 512), "pooled", "feature", 3),
}
DEFAULT_J2 = 5
DEFAULT_BRANCH_WIDTH = 128
# output biases start positive so that no head is rectified to zero at init
OUTPUT_BIAS_INIT = 1.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class Dense:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("weight and bias sizes disagree")

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


def _init_dense(rng, n_in, n_out, activation, bias=0.0):
    bound = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    return Dense(w, np.full(n_out, float(bias)), activation)


@dataclass
class DenseNetwork:
    """Fully connected mask regressor."""

    arch: str
    n_bins: int
    trunk: list
    output: Dense
    n_resolutions: int = DEFAULT_J2 + 1
    branches: list = field(default_factory=list)

    def __post_init__(self):
        self.spec = ARCHS[self.arch]
        dims = self.input_width
        if self.branches:
            dims = sum(b.n_out for b in self.branches)
        for layer in self.trunk + [self.output]:
            if layer.n_in != dims:
                raise ValueError(f"layer expects {layer.n_in} inputs, previous gives {dims}")
            dims = layer.n_out
        if dims != 2 * self.n_bins:
            raise ValueError("output layer must have two heads of n_bins units")

    @property
    def input_width(self) -> int:
        return input_width(self.arch, self.n_bins, self.n_resolutions - 1)

    @property
    def layers(self) -> list:
        return list(self.branches) + list(self.trunk) + [self.output]

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def forward(self, x, keep=False):
        """Masks of shape ``(batch, 2, n_bins)`` for inputs ``(batch, input_width)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ValueError(f"expected inputs (batch, {self.input_width}), got {x.shape}")
        cache = []
        if self.branches:
            width = x.shape[1] // len(self.branches)
            outs = []
            for j, layer in enumerate(self.branches):
                xi = x[:, j * width:(j + 1) * width]
                pre = xi @ layer.weight.T + layer.bias
                cache.append((xi, pre))
                outs.append(np.maximum(pre, 0.0))
            h = np.hstack(outs)
        else:
            h = x
        for layer in self.trunk:
            pre = h @ layer.weight.T + layer.bias
            cache.append((h, pre))
            h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        pre = h @ self.output.weight.T + self.output.bias
        cache.append((h, pre))
        r = np.maximum(pre, 0.0)
        m = self.n_bins
        den = r[:, :m] + r[:, m:] + 2 * HEAD_EPS
        masks = np.stack([(r[:, :m] + HEAD_EPS) / den, (r[:, m:] + HEAD_EPS) / den], axis=1)
        if keep:
            return masks, (cache, den)
        return masks

    def backward(self, masks, state, g_masks) -> list:
        """Gradients of all parameters (``params()`` order) given ``dL/dmasks``."""
        cache, den = state
        m1, m2 = masks[:, 0], masks[:, 1]
        g1, g2 = g_masks[:, 0], g_masks[:, 1]
        gr = np.hstack([m2 * (g1 - g2) / den, m1 * (g2 - g1) / den])
        h, pre = cache[-1]
        g = gr * (pre > 0)
        grads = [(g.T @ h, g.sum(axis=0))]
        gh = g @ self.output.weight
        nb = len(self.branches)
        for k in range(len(self.trunk) - 1, -1, -1):
            layer = self.trunk[k]
            h, pre = cache[nb + k]
            g = gh * (pre > 0) if layer.activation == "relu" else gh
            grads.append((g.T @ h, g.sum(axis=0)))
            gh = g @ layer.weight
        if nb:
            offset = 0
            branch_grads = []
            for j, layer in enumerate(self.branches):
                xi, pre = cache[j]
                g = gh[:, offset:offset + layer.n_out] * (pre > 0)
                offset += layer.n_out
                branch_grads.append((g.T @ xi, g.sum(axis=0)))
            grads += branch_grads[::-1]
        flat = []
        for gw, gb in reversed(grads):
            flat += [gw, gb]
        return flat


class ConvNetwork(DenseNetwork):
    """Per-resolution branches over pooled 3-frame contexts plus a dense trunk."""


def input_width(arch: str, n_bins: int, J2: int = DEFAULT_J2) -> int:
    spec = ARCHS[arch]
    if spec.inputs == "layer1":
        return spec.context * n_bins
    if spec.inputs == "haar":
        return (n_bins - 1) * (J2 + 1)
    return 3 * n_bins * (J2 + 1)


def build_network(arch: str, n_bins, seed: int = 0, J2: int = DEFAULT_J2,
                  hidden: tuple | None = None,
                  branch_width: int = DEFAULT_BRANCH_WIDTH) -> DenseNetwork:
    """Randomly initialised network for ``n_bins`` layer-1 rows.

    ``n_bins`` may also be a feature descriptor dict with a ``rows`` entry.
    Weights are uniform in ``+-1/sqrt(fan_in)``.
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}; choose from {sorted(ARCHS)}")
    if isinstance(n_bins, dict):
        if n_bins.get("level", 1) != 1:
            raise ValueError(f"{arch} needs layer-1 features, got level {n_bins['level']}")
        n_bins = n_bins["rows"]
    if n_bins < 2:
        raise ValueError("need at least two feature rows")
    if J2 < 0:
        raise ValueError("J2 must be >= 0")
    spec = ARCHS[arch]
    hidden = tuple(hidden) if hidden is not None else spec.hidden
    rng = np.random.default_rng(seed)
    branches = []
    dims = input_width(arch, n_bins, J2)
    if spec.inputs == "pooled":
        branches = [_init_dense(rng, 3 * n_bins, branch_width, "relu") for _ in range(J2 + 1)]
        dims = branch_width * (J2 + 1)
    trunk = []
    for width in hidden:
        trunk.append(_init_dense(rng, dims, width, "relu"))
        dims = width
    output = _init_dense(rng, dims, 2 * n_bins, "relu", bias=OUTPUT_BIAS_INIT)
    cls = ConvNetwork if branches else DenseNetwork
    return cls(arch, n_bins, trunk, output, J2 + 1, branches)


# ---- inputs and targets ---------------------------------------------------


def frame_scale(values: np.ndarray) -> np.ndarray:
    """Per-frame RMS of a feature matrix (rows x frames)."""
    return np.linalg.norm(values, axis=0) / np.sqrt(values.shape[0]) + FRAME_EPS


def _context(values, offsets):
    n = values.shape[1]
    cols = [values[:, np.clip(np.arange(n) + o, 0, n - 1)] for o in offsets]
    return np.vstack(cols)


def _dyadic_pool(values, size):
    # centred moving average over ``size`` frames, edges replicated
    if size == 1:
        return values
    n = values.shape[1]
    left = size // 2
    padded = np.pad(values, [(0, 0), (left, size - left)], mode="edge")
    csum = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(padded, axis=1)], axis=1)
    return (csum[:, size:size + n] - csum[:, :n]) / size


def network_inputs(net: DenseNetwork, layer1: ScatteringLayer) -> np.ndarray:
    """Inputs ``(frames, input_width)`` from the mixture's layer-1 features.

    Features are rectified and divided by their per-frame RMS first.
    """
    u = np.abs(layer1.values)
    if u.shape[0] != net.n_bins:
        raise ValueError(f"{net.arch} expects {net.n_bins} layer-1 rows, got {u.shape[0]}")
    u = u / frame_scale(u)[None, :]
    spec = net.spec
    if spec.inputs == "layer1":
        half = spec.context // 2
        x = _context(u, range(-half, half + 1))
    elif spec.inputs == "haar":
        x = haar_features(dataclasses.replace(layer1, values=u), net.n_resolutions - 1).values
    else:
        x = np.vstack([_context(_dyadic_pool(u, 2 ** j), (-2 ** j, 0, 2 ** j))
                       for j in range(net.n_resolutions)])
    return np.ascontiguousarray(x.T)


@dataclass
class Example:
    """One mixture: network inputs, scaled mixture features and targets.

    ``targets`` is ``(frames, 2, n_bins)``: ideal masks (mask loss) or the
    source features on the mixture's per-frame scale (feature loss).
    """

    inputs: np.ndarray
    mixture: np.ndarray
    targets: np.ndarray


def make_example(net: DenseNetwork, mix: ScatteringLayer, src1: ScatteringLayer,
                 src2: ScatteringLayer) -> Example:
    x = network_inputs(net, mix)
    u = np.abs(mix.values)
    scale = frame_scale(u)
    s1, s2 = np.abs(src1.values), np.abs(src2.values)
    if s1.shape != u.shape or s2.shape != u.shape:
        raise ValueError("source and mixture features are on different grids")
    if net.spec.loss == "mask":
        pair = soft_mask(s1, s2, p=2.0)
        targets = np.stack([pair.m1.T, pair.m2.T], axis=1)
    else:
        targets = np.stack([(s1 / scale).T, (s2 / scale).T], axis=1)
    return Example(x, (u / scale).T, targets)


def loss_and_grad(net: DenseNetwork, masks, mixture, targets, with_grad=True):
    """Training loss for a batch of consecutive frames and ``dL/dmasks``."""
    if net.spec.loss == "mask":
        diff = masks - targets
        loss = float(np.mean(diff * diff))
        return (loss, 2.0 * diff / diff.size) if with_grad else loss
    est = masks * mixture[:, None, :]
    loss = 0.0
    g_est = np.zeros_like(est)
    n = est.shape[0]
    for j in range(net.n_resolutions):
        size = 2 ** j
        k = n // size
        if k == 0:
            break
        shape = (k, size) + est.shape[1:]
        pe = est[:k * size].reshape(shape).mean(axis=1)
        pt = targets[:k * size].reshape(shape).mean(axis=1)
        diff = pe - pt
        loss += float(np.mean(diff * diff))
        g = 2.0 * diff / diff.size / size
        g_est[:k * size] += np.repeat(g, size, axis=0)
    if not with_grad:
        return loss
    return loss, g_est * mixture[:, None, :]


def _batches(examples, net, cfg, rng):
    """Index batches: shuffled frames (mask loss) or shuffled contiguous blocks."""
    if net.spec.loss == "mask":
        index = np.concatenate([np.stack([np.full(len(e.inputs), i), np.arange(len(e.inputs))], 1)
                                for i, e in enumerate(examples)])
        order = rng.permutation(len(index))
        for start in range(0, len(order), cfg.batch_size):
            yield index[order[start:start + cfg.batch_size]]
        return
    blocks = []
    for i, e in enumerate(examples):
        for start in range(0, len(e.inputs), cfg.batch_size):
            stop = min(start + cfg.batch_size, len(e.inputs))
            blocks.append((i, start, stop))
    for b in rng.permutation(len(blocks)):
        i, start, stop = blocks[b]
        yield np.stack([np.full(stop - start, i), np.arange(start, stop)], 1)


def _gather(examples, idx):
    if len(idx) == 0:
        raise ValueError("empty batch")
    ex = [examples[i] for i in idx[:, 0]]
    rows = idx[:, 1]
    return (np.array([e.inputs[r] for e, r in zip(ex, rows)]),
            np.array([e.mixture[r] for e, r in zip(ex, rows)]),
            np.array([e.targets[r] for e, r in zip(ex, rows)]))


def dataset_loss(net: DenseNetwork, examples, batch_size: int = 128) -> float:
    """Mean loss over all frames, evaluated on contiguous blocks."""
    total, count = 0.0, 0
    for e in examples:
        for start in range(0, len(e.inputs), batch_size):
            stop = min(start + batch_size, len(e.inputs))
            masks = net.forward(e.inputs[start:stop])
            total += loss_and_grad(net, masks, e.mixture[start:stop], e.targets[start:stop],
                                   with_grad=False) * (stop - start)
            count += stop - start
    return total / count


@dataclass
class TrainResult:
    network: DenseNetwork
    losses: np.ndarray  # mean training loss per epoch
    initial_loss: float


def train(net: DenseNetwork, examples, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch SGD with momentum (``v = mu v - lr g; w += v``), in place."""
    examples = list(examples)
    if not examples or sum(len(e.inputs) for e in examples) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    initial = dataset_loss(net, examples, cfg.batch_size)
    losses = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(examples, net, cfg, rng):
            x, mix, tgt = _gather(examples, idx)
            masks, state = net.forward(x, keep=True)
            loss, g_masks = loss_and_grad(net, masks, mix, tgt)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads = net.backward(masks, state, g_masks)
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
    return TrainResult(net, np.array(losses), initial)


def predict_masks(net: DenseNetwork, layer1: ScatteringLayer):
    """Mask pair on the layer-1 grid of a mixture."""
    masks = net.forward(network_inputs(net, layer1))
    return MaskPair(masks[:, 0].T.copy(), masks[:, 1].T.copy(), 2.0)
