"""Spoken-digit source CNN in plain numpy.

Three blocks of 3x3 conv (zero pad 1) + ReLU + 2x2 max-pool, an adaptive
average pool onto a 4x4 grid, and a dense softmax layer. With the default
64 channels in the last block the pooled activations are the 1024-dim
off-the-shelf feature vector used by the transfer classifiers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

N_CLASSES = 10
POOL_GRID = (4, 4)


class ShapeMismatch(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class DegenerateDataset(ValueError):
    pass


@dataclass
class ConvNetParams:
    """Conv kernels are stored (out, in, 3, 3); the dense weight is (features, classes)."""

    conv_w: list
    conv_b: list
    dense_w: np.ndarray
    dense_b: np.ndarray

    @property
    def channels(self) -> tuple:
        return tuple(w.shape[0] for w in self.conv_w)

    @property
    def n_features(self) -> int:
        return self.dense_w.shape[0]

    def named_tensors(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            out[f"conv{i}.weight"] = w
            out[f"conv{i}.bias"] = b
        out["dense.weight"] = self.dense_w
        out["dense.bias"] = self.dense_b
        return out

    @classmethod
    def from_named(cls, tensors: dict) -> "ConvNetParams":
        n = sum(1 for k in tensors if k.startswith("conv") and k.endswith(".weight"))
        params = cls(
            conv_w=[np.asarray(tensors[f"conv{i}.weight"], dtype=np.float64) for i in range(1, n + 1)],
            conv_b=[np.asarray(tensors[f"conv{i}.bias"], dtype=np.float64) for i in range(1, n + 1)],
            dense_w=np.asarray(tensors["dense.weight"], dtype=np.float64),
            dense_b=np.asarray(tensors["dense.bias"], dtype=np.float64),
        )
        params.check()
        return params

    def check(self) -> None:
        in_ch = 1
        for w, b in zip(self.conv_w, self.conv_b):
            if w.ndim != 4 or w.shape[1:] != (in_ch, 3, 3) or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"conv kernel {w.shape} / bias {b.shape} do not chain from {in_ch} channels")
            in_ch = w.shape[0]
        expected = in_ch * POOL_GRID[0] * POOL_GRID[1]
        if self.dense_w.shape[0] != expected or self.dense_b.shape != (self.dense_w.shape[1],):
            raise ShapeMismatch(f"dense layer expects {expected} inputs, has {self.dense_w.shape}")
        if not all(np.all(np.isfinite(t)) for t in self.named_tensors().values()):
            raise ValueError("parameters contain non-finite values")

    def map(self, fn, *others) -> "ConvNetParams":
        return ConvNetParams(
            conv_w=[fn(w, *(o.conv_w[i] for o in others)) for i, w in enumerate(self.conv_w)],
            conv_b=[fn(b, *(o.conv_b[i] for o in others)) for i, b in enumerate(self.conv_b)],
            dense_w=fn(self.dense_w, *(o.dense_w for o in others)),
            dense_b=fn(self.dense_b, *(o.dense_b for o in others)),
        )

    def copy(self) -> "ConvNetParams":
        return self.map(np.copy)


def init_params(rng_seed: int = 0, channels=(16, 32, 64), n_classes: int = N_CLASSES,
                weight_init_scale: float = 1.0, dense_init_gain: float = 0.01) -> ConvNetParams:
    """He-uniform weights, zero biases.

    The dense layer is additionally shrunk by ``dense_init_gain``: pooled
    ReLU features are uncentered, so a full He-scale readout starts far
    from a uniform softmax.
    """
    rng = np.random.default_rng(rng_seed)
    conv_w, conv_b = [], []
    in_ch = 1
    for out_ch in channels:
        limit = weight_init_scale * math.sqrt(6.0 / (in_ch * 9))
        conv_w.append(rng.uniform(-limit, limit, size=(out_ch, in_ch, 3, 3)))
        conv_b.append(np.zeros(out_ch))
        in_ch = out_ch
    n_feat = in_ch * POOL_GRID[0] * POOL_GRID[1]
    limit = dense_init_gain * weight_init_scale * math.sqrt(6.0 / n_feat)
    dense_w = rng.uniform(-limit, limit, size=(n_feat, n_classes))
    return ConvNetParams(conv_w, conv_b, dense_w, np.zeros(n_classes))


def zero_params(channels=(16, 32, 64), n_classes: int = N_CLASSES) -> ConvNetParams:
    return init_params(0, channels, n_classes).map(np.zeros_like)


# -- layers -----------------------------------------------------------------

def _conv_forward(x, w, b):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w):
    n, c, h, wd = x_shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, -1)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(w.shape[0], -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _maxpool_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def _maxpool_backward(dout, arg, x_shape):
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Averaging matrix for 1-D adaptive pooling; bin i covers [floor(i*n/m), ceil((i+1)*n/m))."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        start = (i * n_in) // n_out
        stop = -((-(i + 1) * n_in) // n_out)
        m[i, start:stop] = 1.0 / (stop - start)
    return m


def pad_input(x: np.ndarray, n_blocks: int = 3) -> np.ndarray:
    """Zero-pad the two trailing axes up to multiples of 2**n_blocks (97x13 -> 104x16)."""
    mult = 2 ** n_blocks
    h, w = x.shape[-2:]
    ph, pw = -h % mult, -w % mult
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad)


def _as_batch(inputs, n_blocks):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or min(x.shape[1:]) < 1:
        raise ShapeMismatch(f"expected a (frames, coefficients) matrix or a batch of them, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeMismatch("input contains non-finite values")
    return pad_input(x, n_blocks)[:, None]


def _forward(params: ConvNetParams, x):
    caches = []
    h = x
    for w, b in zip(params.conv_w, params.conv_b):
        z, cols = _conv_forward(h, w, b)
        a = np.maximum(z, 0.0)
        p, arg = _maxpool_forward(a)
        caches.append((h.shape, cols, z, arg))
        h = p
    ph = adaptive_pool_matrix(h.shape[2], POOL_GRID[0])
    pw = adaptive_pool_matrix(h.shape[3], POOL_GRID[1])
    pooled = np.einsum("ih,nchw,jw->ncij", ph, h, pw)
    feats = pooled.reshape(pooled.shape[0], -1)
    logits = feats @ params.dense_w + params.dense_b
    return logits, feats, (caches, h.shape, ph, pw)


def forward(params: ConvNetParams, inputs) -> np.ndarray:
    """Logits for one feature matrix (shape (10,)) or a batch (shape (n, 10))."""
    single = np.ndim(inputs) == 2
    logits, _, _ = _forward(params, _as_batch(inputs, len(params.conv_w)))
    return logits[0] if single else logits


def extract_features(params: ConvNetParams, inputs) -> np.ndarray:
    """Flattened adaptive-pooled activations of the last conv block (1024 by default).

    The dense layer is never touched.
    """
    single = np.ndim(inputs) == 2
    x = _as_batch(inputs, len(params.conv_w))
    h = x
    for w, b in zip(params.conv_w, params.conv_b):
        z, _ = _conv_forward(h, w, b)
        h, _ = _maxpool_forward(np.maximum(z, 0.0))
    ph = adaptive_pool_matrix(h.shape[2], POOL_GRID[0])
    pw = adaptive_pool_matrix(h.shape[3], POOL_GRID[1])
    feats = np.einsum("ih,nchw,jw->ncij", ph, h, pw).reshape(h.shape[0], -1)
    return feats[0] if single else feats


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _unzip_batch(batch):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[1], np.ndarray):
        x, y = batch
    else:
        batch = list(batch)
        if not batch:
            raise EmptyBatch("batch is empty")
        x = np.stack([np.asarray(m, dtype=np.float64) for m, _ in batch])
        y = np.array([int(lbl) for _, lbl in batch])
    if len(y) == 0:
        raise EmptyBatch("batch is empty")
    return x, np.asarray(y, dtype=np.int64)


def loss_and_gradients(params: ConvNetParams, batch):
    """Mean softmax cross-entropy and its gradient with respect to every parameter.

    ``batch`` is a list of (feature matrix, digit) pairs or an (inputs, labels) array tuple.
    """
    x, y = _unzip_batch(batch)
    n_classes = params.dense_b.shape[0]
    if np.any((y < 0) | (y >= n_classes)):
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    xb = _as_batch(x, len(params.conv_w))
    logits, feats, (caches, last_shape, ph, pw) = _forward(params, xb)
    n = len(y)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(n), y])))

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    d_dense_w = feats.T @ dlogits
    d_dense_b = dlogits.sum(axis=0)
    dpooled = (dlogits @ params.dense_w.T).reshape(n, last_shape[1], POOL_GRID[0], POOL_GRID[1])
    dh = np.einsum("ih,ncij,jw->nchw", ph, dpooled, pw)

    d_conv_w = [None] * len(params.conv_w)
    d_conv_b = [None] * len(params.conv_w)
    for layer in reversed(range(len(params.conv_w))):
        in_shape, cols, z, arg = caches[layer]
        da = _maxpool_backward(dh, arg, z.shape)
        dz = da * (z > 0)
        dh, d_conv_w[layer], d_conv_b[layer] = _conv_backward(dz, cols, in_shape, params.conv_w[layer])
    grads = ConvNetParams(d_conv_w, d_conv_b, d_dense_w, d_dense_b)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    rng_seed: int = 0
    weight_init_scale: float = 1.0
    dense_init_gain: float = 0.01
    channels: tuple = (16, 32, 64)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    params: ConvNetParams
    log: list = field(default_factory=list)


def predict_digits(params: ConvNetParams, inputs, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    return np.concatenate([forward(params, x[i:i + batch_size]).argmax(axis=1)
                           for i in range(0, len(x), batch_size)])


def _dataset_loss(params, x, y, batch_size=256):
    total, correct = 0.0, 0
    for i in range(0, len(y), batch_size):
        logits = forward(params, x[i:i + batch_size])
        probs = softmax(logits)
        yb = y[i:i + batch_size]
        total += float(-np.log(probs[np.arange(len(yb)), yb]).sum())
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total / len(y), correct / len(y)


def train_source(dataset, config: TrainConfig = TrainConfig(),
                 init: ConvNetParams | None = None, progress=None) -> TrainResult:
    """Mini-batch SGD with momentum on (feature matrix, digit) pairs.

    ``log[0]`` holds the loss/accuracy of the initial parameters; entry e is
    the running mean over epoch e's mini-batches.
    """
    x, y = _unzip_batch(dataset)
    if len(np.unique(y)) < 2:
        raise DegenerateDataset("source training needs at least two distinct digit labels")
    n_classes = N_CLASSES if init is None else init.dense_b.shape[0]
    rng = np.random.default_rng(config.rng_seed)
    params = (init.copy() if init is not None else
              init_params(int(rng.integers(2**63)), config.channels, n_classes,
                          config.weight_init_scale, config.dense_init_gain))
    velocity = params.map(np.zeros_like)

    loss0, acc0 = _dataset_loss(params, x, y)
    log = [EpochStats(0, loss0, acc0)]
    lr, mom = config.learning_rate, config.momentum
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(params, (x[idx], y[idx]))
            total += loss * len(idx)
            velocity = velocity.map(lambda v, g: mom * v - lr * g, grads)
            params = params.map(lambda p, v: p + v, velocity)
        log.append(EpochStats(epoch, total / len(y), _dataset_loss(params, x, y)[1]))
        if progress is not None:
            progress(log[-1])
    return TrainResult(params, log)
