"""Frozen-weight networks trained through a Bernoulli score mask.

Parameters live in one flat float64 vector. Each conv/dense layer owns a
contiguous slice laid out as ``weights`` then ``bias``. The forward pass
takes an already-masked parameter vector, so the same code serves the mask
learner (``m * w_init``) and the dense baselines (plain weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

EPS = 1e-6


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    pad: int = 1

    @property
    def n_params(self) -> int:
        return self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    stride: int = 2
    n_params = 0


@dataclass(frozen=True)
class Flatten:
    n_params = 0


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    @property
    def n_params(self) -> int:
        return self.in_features * self.out_features + self.out_features


Layer = Union[Conv2d, MaxPool, Flatten, Dense]


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int]
    num_classes: int
    name: str = "custom"

    def __post_init__(self):
        shape: tuple[int, ...] = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            shape = _out_shape(layer, shape, i)
        if shape != (self.num_classes,):
            raise ValueError(f"network emits shape {shape}, expected ({self.num_classes},)")

    @property
    def param_layers(self) -> list[int]:
        """Indices (into ``layers``) of layers that carry parameters."""
        return [i for i, layer in enumerate(self.layers) if layer.n_params]

    @property
    def layer_offsets(self) -> dict[int, tuple[int, int]]:
        offsets = {}
        start = 0
        for i in self.param_layers:
            n = self.layers[i].n_params
            offsets[i] = (start, n)
            start += n
        return offsets

    @property
    def num_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)


def _out_shape(layer: Layer, shape: tuple[int, ...], idx: int) -> tuple[int, ...]:
    if isinstance(layer, Conv2d):
        if len(shape) != 3 or shape[0] != layer.in_ch:
            raise ValueError(f"layer {idx}: conv expects ({layer.in_ch}, H, W), got {shape}")
        _, h, w = shape
        h = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
        w = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
        return (layer.out_ch, h, w)
    if isinstance(layer, MaxPool):
        if len(shape) != 3:
            raise ValueError(f"layer {idx}: pooling expects a 3-d feature map, got {shape}")
        c, h, w = shape
        h, w = (h - layer.size) // layer.stride + 1, (w - layer.size) // layer.stride + 1
        if h < 1 or w < 1:
            raise ValueError(f"layer {idx}: pooling collapses spatial extent to zero")
        return (c, h, w)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        if shape != (layer.in_features,):
            raise ValueError(f"layer {idx}: dense expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    raise TypeError(f"unknown layer {layer!r}")


def build_architecture(input_shape: Sequence[int], num_classes: int, mlp: bool = False,
                       hidden: Sequence[int] = (64, 64)) -> ArchitectureSpec:
    """CONV-4 (64-64 / pool / 128-128 / pool / 256-256-C) or a small MLP.

    The MLP variant flattens the input and uses ``hidden`` dense widths
    before the classifier.
    """
    c, h, w = (int(v) for v in input_shape)
    if c < 1 or num_classes < 1:
        raise ValueError("channels and num_classes must be positive")
    if mlp:
        widths = [c * h * w, *hidden, num_classes]
        layers: list[Layer] = [Flatten()]
        layers += [Dense(a, b) for a, b in zip(widths[:-1], widths[1:])]
        return ArchitectureSpec(tuple(layers), (c, h, w), num_classes, name="mlp")
    if h < 4 or w < 4:
        raise ValueError(f"input {h}x{w} is too small for two 2x2 poolings")
    flat = 128 * (h // 2 // 2) * (w // 2 // 2)
    layers = (
        Conv2d(c, 64), Conv2d(64, 64), MaxPool(),
        Conv2d(64, 128), Conv2d(128, 128), MaxPool(),
        Flatten(),
        Dense(flat, 256), Dense(256, 256), Dense(256, num_classes),
    )
    return ArchitectureSpec(layers, (c, h, w), num_classes, name="conv4")


@dataclass(frozen=True)
class LayerPartition:
    """Split of parameter layers into shared (aggregated) and private (local) sets."""

    shared_layers: frozenset[int]
    private_layers: frozenset[int]
    shared_idx: np.ndarray = field(repr=False, compare=False)
    private_idx: np.ndarray = field(repr=False, compare=False)

    @property
    def shared_dim(self) -> int:
        return int(self.shared_idx.size)

    @property
    def private_dim(self) -> int:
        return int(self.private_idx.size)

    @property
    def dim(self) -> int:
        return self.shared_dim + self.private_dim


def make_partition(arch: ArchitectureSpec, private_layers: Sequence[int] | None = None,
                   n_private_last: int | None = None) -> LayerPartition:
    """Build a partition from explicit layer ids or "the last n parameter layers".

    Defaults: the three dense layers of CONV-4 are private; for the MLP only
    the classifier is private so that something is left to share.
    """
    params = arch.param_layers
    if private_layers is None:
        if n_private_last is None:
            n_private_last = 3 if arch.name == "conv4" else 1
        if not 0 <= n_private_last <= len(params):
            raise ValueError(f"cannot make {n_private_last} of {len(params)} layers private")
        private_layers = params[len(params) - n_private_last:]
    private = frozenset(int(i) for i in private_layers)
    unknown = private - set(params)
    if unknown:
        raise ValueError(f"layers {sorted(unknown)} carry no parameters")
    shared = frozenset(params) - private
    offsets = arch.layer_offsets

    def _idx(layers):
        parts = [np.arange(offsets[i][0], offsets[i][0] + offsets[i][1]) for i in sorted(layers)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    return LayerPartition(shared, private, _idx(shared), _idx(private))


# --------------------------------------------------------------------------- weights


def init_frozen_weights(arch: ArchitectureSpec, seed: int) -> np.ndarray:
    """He-style init (std sqrt(2/fan_in)) for weights and biases; read-only result."""
    rng = np.random.default_rng(seed)
    out = np.empty(arch.num_params)
    for i, (start, n) in arch.layer_offsets.items():
        layer = arch.layers[i]
        if isinstance(layer, Conv2d):
            fan_in = layer.in_ch * layer.kernel * layer.kernel
        else:
            fan_in = layer.in_features
        out[start:start + n] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=n)
    out.flags.writeable = False
    return out


def logistic_transform(x, direction: str = "forward") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if direction == "forward":
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if direction == "inverse":
        p = np.clip(x, EPS, 1.0 - EPS)
        return np.log(p) - np.log1p(-p)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def sigmoid(x) -> np.ndarray:
    return logistic_transform(x, "forward")


def logit(p) -> np.ndarray:
    return logistic_transform(p, "inverse")


def init_scores(d: int, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    return rng.uniform(-scale, scale, size=d)


def sample_binary_mask(theta, rng: np.random.Generator) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return (rng.random(theta.shape) < theta).astype(np.uint8)


def apply_mask(w: np.ndarray, m: np.ndarray) -> np.ndarray:
    w = np.asarray(w)
    m = np.asarray(m)
    if w.shape != m.shape:
        raise ValueError(f"weight length {w.shape} != mask length {m.shape}")
    return w * m


def sgd_step(scores: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    if eta <= 0:
        raise ValueError("eta must be positive")
    return scores - eta * grad


# --------------------------------------------------------------------------- network


def _conv_forward(x, wt, b, pad):
    k = wt.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.einsum("nchwij,ocij->nohw", win, wt, optimize=True) + b[None, :, None, None]
    return out, win


def _conv_backward(dout, win, wt, pad, x_shape):
    k = wt.shape[-1]
    dw = np.einsum("nchwij,nohw->ocij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    ho, wo = dout.shape[2:]
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + ho, j:j + wo] += np.einsum("nohw,oc->nchw", dout, wt[:, :, i, j], optimize=True)
    return dxp[:, :, pad:pad + h, pad:pad + w], dw, db


def _pool_forward(x, size):
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    blocks = x[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, size, x_shape):
    n, c, h, w = x_shape
    ho, wo = dout.shape[2:]
    blocks = np.zeros((n, c, ho, wo, size * size))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape)
    dx[:, :, :ho * size, :wo * size] = blocks.reshape(n, c, ho * size, wo * size)
    return dx


def _unpack(arch, params, i):
    start, n = arch.layer_offsets[i]
    layer = arch.layers[i]
    chunk = params[start:start + n]
    if isinstance(layer, Conv2d):
        nw = layer.out_ch * layer.in_ch * layer.kernel ** 2
        return chunk[:nw].reshape(layer.out_ch, layer.in_ch, layer.kernel, layer.kernel), chunk[nw:]
    nw = layer.in_features * layer.out_features
    return chunk[:nw].reshape(layer.in_features, layer.out_features), chunk[nw:]


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(y)), y].mean()
    return loss, logp


def _check_batch(arch, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != tuple(arch.input_shape):
        raise ValueError(f"batch shape {x.shape[1:]} != input shape {arch.input_shape}")
    if y is not None:
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise ValueError("labels must be a vector matching the batch size")
        if y.size and (y.min() < 0 or y.max() >= arch.num_classes):
            raise ValueError("labels out of range")
    return x, y


def _run(arch, params, x, keep_cache):
    # ReLU follows every conv and every dense layer except the classifier
    last_dense = max(i for i, layer in enumerate(arch.layers) if isinstance(layer, Dense))
    cache = []
    h = x
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, Conv2d):
            wt, b = _unpack(arch, params, i)
            inp_shape = h.shape
            h, win = _conv_forward(h, wt, b, layer.pad)
            h = np.maximum(h, 0.0)
            cache.append((win, inp_shape, h > 0) if keep_cache else None)
        elif isinstance(layer, MaxPool):
            inp_shape = h.shape
            h, arg = _pool_forward(h, layer.size)
            cache.append((arg, inp_shape) if keep_cache else None)
        elif isinstance(layer, Flatten):
            cache.append(h.shape if keep_cache else None)
            h = h.reshape(h.shape[0], -1)
        else:
            wt, b = _unpack(arch, params, i)
            inp = h
            h = inp @ wt + b
            relu = i != last_dense
            if relu:
                h = np.maximum(h, 0.0)
            cache.append((inp, h > 0 if relu else None) if keep_cache else None)
    return h, cache


def forward(arch: ArchitectureSpec, masked_params: np.ndarray, x, y=None):
    """Return ``(logits, loss)``; ``loss`` is the mean softmax cross-entropy (None without labels)."""
    x, y = _check_batch(arch, x, y)
    params = np.asarray(masked_params, dtype=np.float64)
    if params.shape != (arch.num_params,):
        raise ValueError(f"parameter vector length {params.shape} != {arch.num_params}")
    logits, _ = _run(arch, params, x, keep_cache=False)
    loss = None if y is None else float(_softmax_xent(logits, y)[0])
    return logits, loss


def loss_and_param_grad(arch: ArchitectureSpec, masked_params: np.ndarray, x, y):
    """Mean cross-entropy and its gradient with respect to the (masked) parameter vector."""
    x, y = _check_batch(arch, x, y)
    params = np.asarray(masked_params, dtype=np.float64)
    if params.shape != (arch.num_params,):
        raise ValueError(f"parameter vector length {params.shape} != {arch.num_params}")
    logits, cache = _run(arch, params, x, keep_cache=True)
    loss, logp = _softmax_xent(logits, y)
    grad = np.zeros_like(params)
    g = np.exp(logp)
    g[np.arange(len(y)), y] -= 1.0
    g /= len(y)
    offsets = arch.layer_offsets
    for i in range(len(arch.layers) - 1, -1, -1):
        layer, c = arch.layers[i], cache[i]
        if isinstance(layer, Dense):
            inp, active = c
            if active is not None:
                g = g * active
            wt, _ = _unpack(arch, params, i)
            start, n = offsets[i]
            nw = layer.in_features * layer.out_features
            grad[start:start + nw] = (inp.T @ g).ravel()
            grad[start + nw:start + n] = g.sum(axis=0)
            g = g @ wt.T
        elif isinstance(layer, Flatten):
            g = g.reshape(c)
        elif isinstance(layer, MaxPool):
            arg, inp_shape = c
            g = _pool_backward(g, arg, layer.size, inp_shape)
        else:
            win, inp_shape, active = c
            g = g * active
            wt, _ = _unpack(arch, params, i)
            g, dw, db = _conv_backward(g, win, wt, layer.pad, inp_shape)
            start, n = offsets[i]
            grad[start:start + n - layer.out_ch] = dw.ravel()
            grad[start + n - layer.out_ch:start + n] = db
    return float(loss), grad


def score_grad_from_param_grad(param_grad, w_init, theta, ste: str = "identity") -> np.ndarray:
    """Chain dL/dw_masked through w_init, the Bernoulli hop and the sigmoid.

    ``ste="identity"`` passes the gradient straight through the sampling step;
    ``ste="theta"`` multiplies it by the keep-probability instead.
    """
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(param_grad) * np.asarray(w_init)
    if ste == "theta":
        g = g * theta
    elif ste != "identity":
        raise ValueError(f"unknown straight-through variant {ste!r}")
    return g * theta * (1.0 - theta)


def backward_score_grad(arch, w_init, scores, theta, m, x, y, ste: str = "identity",
                        relaxed: bool = False):
    """Return ``(loss, dL/dscores)`` for one batch.

    With ``relaxed=True`` the forward pass uses ``theta * w_init`` instead of
    the sampled mask, which makes the loss a smooth function of the scores
    (used only for gradient checking).
    """
    if theta is None:
        theta = sigmoid(scores)
    mask = theta if relaxed else m
    loss, pg = loss_and_param_grad(arch, apply_mask(w_init, mask), x, y)
    return loss, score_grad_from_param_grad(pg, w_init, theta, ste)


def predict(arch: ArchitectureSpec, params: np.ndarray, x, batch_size: int = 512) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest class index."""
    x = np.asarray(x, dtype=np.float64)
    preds = []
    for i in range(0, len(x), batch_size):
        logits, _ = forward(arch, params, x[i:i + batch_size])
        preds.append(logits.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
