"""Small numpy layer engine with hand-written forward/backward passes.

Activations use NHWC layout ``(count, height, width, channels)`` so that the
im2col copies gather contiguous channel runs. Convolution weights use the
conventional ``(out_channels, in_channels, k, k)`` layout. Every function is
dtype-preserving: training runs in float32, gradient checks may use float64.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LayerParams",
    "TrainConfig",
    "ShapeError",
    "im2col",
    "col2im",
    "conv_forward",
    "conv_backward",
    "deconv_forward",
    "deconv_backward",
    "maxpool_forward",
    "maxpool_backward",
    "dense_forward",
    "dense_backward",
    "relu_forward",
    "relu_backward",
    "sigmoid",
    "softmax",
    "softmax_xent",
    "l2_mask_loss",
    "sgd_step",
    "learning_rate_at",
    "write_tcnn1",
    "read_tcnn1",
]


class ShapeError(ValueError):
    """Raised when a tensor does not have the dimensions a layer expects."""


@dataclass
class LayerParams:
    """Weights, biases and their gradient accumulators for one layer."""

    kind: str
    w: np.ndarray
    b: np.ndarray
    dw: np.ndarray = field(init=False)
    db: np.ndarray = field(init=False)
    vw: np.ndarray = field(init=False)
    vb: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.kind) != 4:
            raise ValueError(f"layer kind tag must be 4 characters, got {self.kind!r}")
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.vw = np.zeros_like(self.w)
        self.vb = np.zeros_like(self.b)

    def zero_grad(self):
        self.dw.fill(0)
        self.db.fill(0)

    def copy(self) -> "LayerParams":
        out = LayerParams(self.kind, self.w.copy(), self.b.copy())
        out.vw[...] = self.vw
        out.vb[...] = self.vb
        return out


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 16
    seed: int = 0
    lr_decay: float = 0.1
    lr_decay_at: float = 2.0 / 3.0
    clip_norm: float | None = 10.0  # global gradient-norm cap

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


def _check_nhwc(x: np.ndarray, channels: int, name: str):
    if x.ndim != 4 or x.shape[3] != channels:
        raise ShapeError(
            f"{name}: expected input (N, H, W, {channels}), got {tuple(x.shape)}"
        )


# ---------------------------------------------------------------------------
# im2col helpers


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Valid k x k windows of an NHWC batch as rows ``(N*Ho*Wo, k*k*C)``.

    Columns are ordered (row offset, column offset, channel).
    """
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    s = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, k, k, c), (s[0], s[1], s[2], s[1], s[2], s[3]), writeable=False
    )
    return np.ascontiguousarray(win).reshape(n * ho * wo, k * k * c)


def col2im(cols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add window rows back into ``shape``."""
    n, h, w, c = shape
    ho, wo = h - k + 1, w - k + 1
    cols = cols.reshape(n, ho, wo, k, k, c)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i : i + ho, j : j + wo, :] += cols[:, :, :, i, j, :]
    return out


def _wmat(w: np.ndarray) -> np.ndarray:
    # (O, C, k, k) -> (k*k*C, O), matching im2col column order
    o, c, k, _ = w.shape
    return w.transpose(2, 3, 1, 0).reshape(k * k * c, o)


def _unwmat(m: np.ndarray, w_shape: tuple) -> np.ndarray:
    o, c, k, _ = w_shape
    return m.reshape(k, k, c, o).transpose(3, 2, 0, 1)


# ---------------------------------------------------------------------------
# convolution / transposed convolution


def conv_forward(x: np.ndarray, p: LayerParams):
    """Valid (unpadded) stride-1 cross-correlation. Returns ``(y, cache)``."""
    o, c, k, k2 = p.w.shape
    _check_nhwc(x, c, "conv_forward")
    n, h, w, _ = x.shape
    if h < k or w < k:
        raise ShapeError(f"conv_forward: input {h}x{w} smaller than kernel {k}x{k2}")
    cols = im2col(x, k)
    y = cols @ _wmat(p.w) + p.b
    return y.reshape(n, h - k + 1, w - k + 1, o), (cols, x.shape)


def conv_backward(dy: np.ndarray, cache, p: LayerParams, need_dx: bool = True):
    """Accumulate ``p.dw``/``p.db`` and return the input gradient (or None)."""
    cols, x_shape = cache
    o, _, k, _ = p.w.shape
    dy2 = dy.reshape(-1, o)
    p.dw += _unwmat(cols.T @ dy2, p.w.shape)
    p.db += dy2.sum(axis=0)
    if not need_dx:
        return None
    return col2im(dy2 @ _wmat(p.w).T, x_shape, k)


def deconv_forward(x: np.ndarray, p: LayerParams):
    """Transposed convolution, the adjoint of :func:`conv_forward`.

    ``p.w`` has the shape of the convolution it transposes, ``(Cin, Cout, k, k)``
    where Cin is this layer's input depth. Output side is ``in + k - 1``.
    """
    cin, cout, k, _ = p.w.shape
    _check_nhwc(x, cin, "deconv_forward")
    n, h, w, _ = x.shape
    out_shape = (n, h + k - 1, w + k - 1, cout)
    cols = x.reshape(-1, cin) @ _wmat(p.w).T
    y = col2im(cols, out_shape, k) + p.b
    return y, x


def deconv_backward(dy: np.ndarray, cache, p: LayerParams, need_dx: bool = True):
    x = cache
    cin, cout, k, _ = p.w.shape
    cols = im2col(dy, k)
    x2 = x.reshape(-1, cin)
    p.dw += _unwmat(cols.T @ x2, p.w.shape)
    p.db += dy.reshape(-1, cout).sum(axis=0)
    if not need_dx:
        return None
    return (cols @ _wmat(p.w)).reshape(x.shape)


# ---------------------------------------------------------------------------
# pooling, dense, activations


def maxpool_forward(x: np.ndarray, window: int = 3, stride: int = 3):
    """Non-overlapping max pooling (window == stride). Trailing rows are dropped."""
    if window != stride:
        raise ValueError("only non-overlapping pooling (window == stride) is supported")
    n, h, w, c = x.shape
    ho, wo = h // stride, w // stride
    xt = x[:, : ho * stride, : wo * stride, :]
    win = xt.reshape(n, ho, stride, wo, stride, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, ho, wo, c, stride * stride)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, stride)


def maxpool_backward(dy: np.ndarray, cache) -> np.ndarray:
    idx, x_shape, s = cache
    n, h, w, c = x_shape
    ho, wo = dy.shape[1], dy.shape[2]
    win = np.zeros((n, ho, wo, c, s * s), dtype=dy.dtype)
    np.put_along_axis(win, idx[..., None], dy[..., None], axis=-1)
    win = win.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, : ho * s, : wo * s, :] = win.reshape(n, ho * s, wo * s, c)
    return dx


def dense_forward(x: np.ndarray, p: LayerParams):
    """Fully connected layer; ``p.w`` is ``(in, out)``. Input is flattened."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != p.w.shape[0]:
        raise ShapeError(
            f"dense_forward: expected {p.w.shape[0]} input features, got {x2.shape[1]}"
        )
    return x2 @ p.w + p.b, (x2, x.shape)


def dense_backward(dy: np.ndarray, cache, p: LayerParams, need_dx: bool = True):
    x2, x_shape = cache
    p.dw += x2.T @ dy
    p.db += dy.sum(axis=0)
    if not need_dx:
        return None
    return (dy @ p.w.T).reshape(x_shape)


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# losses


def softmax_xent(logits: np.ndarray, labels):
    """Per-sample ``-log softmax(logits)[label]`` and its gradient w.r.t. logits.

    ``logits`` is ``(N, K)`` (a 1-d vector is treated as N=1). Labels < 0 mark
    missing targets; those rows get zero loss and zero gradient.
    """
    squeeze = logits.ndim == 1
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if np.any(labels >= k):
        raise ValueError(f"label out of range for {k} classes")
    valid = labels >= 0
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    safe = np.where(valid, labels, 0)
    loss = (logsum - z[np.arange(n), safe]) * valid
    grad = softmax(logits)
    grad[np.arange(n), safe] -= 1
    grad *= valid[:, None]
    if squeeze:
        return loss[0], grad[0]
    return loss, grad


def l2_mask_loss(pred: np.ndarray, target: np.ndarray):
    """Sum of squared differences per sample and its gradient ``2(pred - target)``.

    Leading axis is the sample axis when ``pred.ndim > 2``.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"l2_mask_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    if pred.ndim <= 2:
        return float((diff * diff).sum()), 2 * diff
    loss = (diff * diff).reshape(diff.shape[0], -1).sum(axis=1)
    return loss, 2 * diff


# ---------------------------------------------------------------------------
# optimisation


def learning_rate_at(iteration: int, total: int, cfg: TrainConfig) -> float:
    """Step schedule: base rate, multiplied by ``lr_decay`` from ``lr_decay_at * total``."""
    if iteration >= int(cfg.lr_decay_at * total):
        return cfg.learning_rate * cfg.lr_decay
    return cfg.learning_rate


def gradient_norm(params) -> float:
    return math.sqrt(sum(float((p.dw.astype(np.float64) ** 2).sum() + (p.db.astype(np.float64) ** 2).sum()) for p in params))


def sgd_step(params, cfg: TrainConfig, lr: float | None = None):
    """Momentum SGD with L2 weight decay on weights (biases are not decayed).

    ``v <- momentum * v - lr * (g + decay * w)``; ``w <- w + v``. Updates in place.
    With ``clip_norm`` set, gradients are first rescaled so their global norm
    does not exceed it.
    """
    lr = cfg.learning_rate if lr is None else lr
    scale = 1.0
    if cfg.clip_norm is not None:
        norm = gradient_norm(params)
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
    for p in params:
        g = scale * p.dw
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.w
        p.vw *= cfg.momentum
        p.vw -= lr * g
        p.w += p.vw
        p.vb *= cfg.momentum
        p.vb -= lr * scale * p.db
        p.b += p.vb
    return params


# ---------------------------------------------------------------------------
# TCNN1 serialisation

MAGIC = b"TCNN1\x00"


def _write_array(buf: list, a: np.ndarray):
    buf.append(struct.pack("<I", a.ndim))
    buf.append(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.append(np.ascontiguousarray(a, dtype="<f4").tobytes())


def write_tcnn1(path, layers) -> None:
    """Write ``[(name, LayerParams)]`` records.

    Layout: magic, uint32 record count, then per record the 4-byte kind tag,
    uint16 name length + UTF-8 name, and the weight and bias arrays each as
    uint32 ndim, uint32 dims, raw float32. All integers little-endian.
    """
    buf = [MAGIC, struct.pack("<I", len(layers))]
    for name, p in layers:
        raw = name.encode()
        buf.append(p.kind.encode("ascii"))
        buf.append(struct.pack("<H", len(raw)))
        buf.append(raw)
        _write_array(buf, p.w)
        _write_array(buf, p.b)
    with open(path, "wb") as fh:
        fh.write(b"".join(buf))


def read_tcnn1(path) -> list:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a TCNN1 model file")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_array():
        nonlocal pos
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        a = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        return a.astype(np.float32)

    (count,) = take("<I")
    layers = []
    for _ in range(count):
        kind = data[pos : pos + 4].decode("ascii")
        pos += 4
        (nlen,) = take("<H")
        name = data[pos : pos + nlen].decode()
        pos += nlen
        w = take_array()
        b = take_array()
        layers.append((name, LayerParams(kind, w, b)))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return layers
