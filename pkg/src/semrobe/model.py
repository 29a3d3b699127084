"""Feed-forward sentiment classifier over flattened embedded text.

Default topology: flatten(25 x 50) -> 32 ReLU -> 32 ReLU -> 2 softmax, i.e.
41,154 parameters.  Training is mini-batch SGD (optionally with momentum) on
cross-entropy, with hand-written backprop.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .embedding import EmbeddedText
from .errors import (
    CorruptFile,
    EmptyDataset,
    InvalidShape,
    LabelOutOfRange,
    ShapeMismatch,
    VersionMismatch,
)

DEFAULT_LENGTH = 25
DEFAULT_DIM = 50
DEFAULT_HIDDEN = (32, 32)

ACTIVATIONS = ("identity", "relu", "softmax")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidShape(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidShape(f"weights {self.weights.shape} incompatible with bias {self.bias.shape}")

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class Classifier:
    layers: list[DenseLayer]
    input_shape: tuple[int, int]
    num_classes: int = 2

    def __post_init__(self):
        fan_in = self.input_shape[0] * self.input_shape[1]
        for layer in self.layers:
            if layer.weights.shape[1] != fan_in:
                raise InvalidShape(f"layer expects {layer.weights.shape[1]} inputs, chain provides {fan_in}")
            fan_in = layer.weights.shape[0]
        if fan_in != self.num_classes:
            raise InvalidShape(f"last layer has {fan_in} outputs, expected {self.num_classes}")
        if self.layers[-1].activation != "softmax":
            raise InvalidShape("final activation must be softmax")

    @property
    def n_inputs(self) -> int:
        return self.input_shape[0] * self.input_shape[1]

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for l in self.layers:
            out += [l.weights, l.bias]
        return out

    def copy(self) -> "Classifier":
        return Classifier(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.input_shape,
            self.num_classes,
        )

    def astype(self, dtype) -> "Classifier":
        return Classifier(
            [DenseLayer(l.weights.astype(dtype), l.bias.astype(dtype), l.activation) for l in self.layers],
            self.input_shape,
            self.num_classes,
        )


def init_model(
    length: int = DEFAULT_LENGTH,
    dim: int = DEFAULT_DIM,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    num_classes: int = 2,
    seed: int = 0,
    dtype=np.float32,
) -> Classifier:
    """He-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases."""
    hidden = list(hidden)
    if not hidden or any(h < 1 for h in hidden) or length < 1 or dim < 1 or num_classes < 2:
        raise InvalidShape(f"invalid architecture l={length} d={dim} hidden={hidden} classes={num_classes}")
    rng = np.random.default_rng(seed)
    sizes = [length * dim] + hidden + [num_classes]
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)
        act = "softmax" if i == len(sizes) - 2 else "relu"
        layers.append(DenseLayer(w, np.zeros(n_out, dtype=dtype), act))
    return Classifier(layers, (length, dim), num_classes)


def _as_batch(m: Classifier, x) -> tuple[np.ndarray, bool]:
    if isinstance(x, EmbeddedText):
        x = x.matrix
    x = np.asarray(x)
    single = False
    if x.ndim == 2 and x.shape == tuple(m.input_shape):
        x, single = x.reshape(1, -1), True
    elif x.ndim == 1:
        x, single = x.reshape(1, -1), True
    elif x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != m.n_inputs:
        raise ShapeMismatch(f"input of shape {x.shape} does not match model input {m.input_shape}")
    return x.astype(m.dtype, copy=False), single


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0)
    return z


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _forward_cache(m: Classifier, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for layer in m.layers:
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = _activate(z, layer.activation)
        acts.append(h)
    return pre, acts


def logits(m: Classifier, x) -> np.ndarray:
    xb, single = _as_batch(m, x)
    z = _forward_cache(m, xb)[0][-1]
    return z[0] if single else z


def forward(m: Classifier, x) -> np.ndarray:
    """Class probabilities for one input (EmbeddedText or matrix) or a batch."""
    z = logits(m, x)
    return softmax(z.astype(np.float64))


def predict(m: Classifier, x):
    """Argmax class; ``np.argmax`` resolves ties toward the lower index."""
    z = logits(m, x)
    out = np.argmax(z, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def cross_entropy(z: np.ndarray, y: np.ndarray) -> float:
    lp = log_softmax(z.astype(np.float64))
    return float(-lp[np.arange(len(y)), y].mean())


def ce_rows(z: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of logits ``z`` and its gradient w.r.t. ``z`` (float64)."""
    z = z.astype(np.float64)
    n = len(y)
    rows = np.arange(n)
    loss = float(-log_softmax(z)[rows, y].mean())
    dz = softmax(z)
    dz[rows, y] -= 1.0
    return loss, dz / n


def backward(m: Classifier, pre, acts, dz_out: np.ndarray) -> list[np.ndarray]:
    """Backprop ``dL/dlogits`` to parameter gradients ``[dW0, db0, ...]``."""
    grads: list[np.ndarray] = [None] * (2 * len(m.layers))
    delta = dz_out
    for i in range(len(m.layers) - 1, -1, -1):
        layer = m.layers[i]
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ layer.weights) * (pre[i - 1] > 0)
    return grads


def ce_loss_and_grads(m: Classifier, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its parameter gradients."""
    pre, acts = _forward_cache(m, x)
    loss, dz = ce_rows(pre[-1], y)
    return loss, backward(m, pre, acts, dz.astype(m.dtype))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float


@dataclass
class TrainResult:
    model: Classifier
    log: list[EpochLog] = field(default_factory=list)

    def write_log(self, path, header: str | None = None) -> None:
        write_training_log(self.log, path, header)


def write_training_log(log: Sequence[EpochLog], path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(header)
        fh.write("epoch\tloss\ttrain_acc\n")
        for e in log:
            fh.write(f"{e.epoch}\t{e.loss:.6f}\t{e.train_acc:.6f}\n")


def as_arrays(m: Classifier, dataset) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(X, y)`` arrays or a sequence of ``(EmbeddedText, label)`` pairs."""
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        x, y = dataset
    else:
        if len(dataset) == 0:
            raise EmptyDataset("empty dataset")
        x = np.stack([(e.matrix if isinstance(e, EmbeddedText) else np.asarray(e)).reshape(-1) for e, _ in dataset])
        y = np.array([lab for _, lab in dataset])
    if len(x) == 0:
        raise EmptyDataset("empty dataset")
    y = np.asarray(y, dtype=np.int64)
    if y.min() < 0 or y.max() >= m.num_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {m.num_classes})")
    xb, _ = _as_batch(m, x.reshape(len(x), -1))
    return xb, y


GradFn = Callable[[Classifier, np.ndarray, np.ndarray, int], tuple]


def fit(m: Classifier, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, grad_fn: GradFn) -> TrainResult:
    """Mini-batch gradient descent driven by ``grad_fn(model, xb, yb, epoch) -> (loss, grads)``."""
    model = m.copy()
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    mu = cfg.momentum if cfg.optimizer == "sgd_momentum" else 0.0
    lr = np.asarray(cfg.learning_rate, dtype=model.dtype)
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = grad_fn(model, x[idx], y[idx], epoch)
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= mu
                v -= lr * g.astype(model.dtype, copy=False)
                p += v
        acc = float((predict(model, x) == y).mean())
        log.append(EpochLog(epoch, total / n, acc))
    return TrainResult(model, log)


def train(m: Classifier, dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Vanilla cross-entropy training; returns a new model plus per-epoch log."""
    x, y = as_arrays(m, dataset)
    return fit(m, x, y, cfg, lambda model, xb, yb, epoch: ce_loss_and_grads(model, xb, yb))


def accuracy(m: Classifier, x, y) -> float:
    return float((predict(m, x) == np.asarray(y)).mean())


def param_norm(m: Classifier) -> float:
    """Mean over layers of the L2 norm of each layer's concatenated weights and bias."""
    norms = [
        np.sqrt(np.sum(l.weights.astype(np.float64) ** 2) + np.sum(l.bias.astype(np.float64) ** 2))
        for l in m.layers
    ]
    return float(np.mean(norms))


# --- serialization ---------------------------------------------------------

MAGIC = b"SRBM"
FORMAT_VERSION = 1
_ACT_CODE = {a: i for i, a in enumerate(ACTIVATIONS)}


def save_model(m: Classifier, path) -> None:
    """Binary layout (little-endian): magic, u32 version, u32 l, d, classes, n_layers,
    then per layer u32 out, in, activation; then f32 weights (row-major) and biases
    per layer; trailing u32 CRC32 of everything before it."""
    buf = bytearray(MAGIC)
    buf += struct.pack("<5I", FORMAT_VERSION, *m.input_shape, m.num_classes, len(m.layers))
    for l in m.layers:
        buf += struct.pack("<3I", *l.weights.shape, _ACT_CODE[l.activation])
    for l in m.layers:
        buf += l.weights.astype("<f4").tobytes()
        buf += l.bias.astype("<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    Path(path).write_bytes(bytes(buf))


def load_model(path) -> Classifier:
    data = Path(path).read_bytes()
    if len(data) < 28 or data[:4] != MAGIC:
        raise CorruptFile(f"{path}: not a model file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptFile(f"{path}: checksum mismatch (truncated or damaged)")
    try:
        l, d, classes, n_layers = struct.unpack_from("<4I", data, 8)
        off = 24
        shapes = []
        for _ in range(n_layers):
            out, inp, act = struct.unpack_from("<3I", data, off)
            shapes.append((out, inp, ACTIVATIONS[act]))
            off += 12
        layers = []
        for out, inp, act in shapes:
            w = np.frombuffer(data, dtype="<f4", count=out * inp, offset=off).reshape(out, inp)
            off += 4 * out * inp
            b = np.frombuffer(data, dtype="<f4", count=out, offset=off)
            off += 4 * out
            layers.append(DenseLayer(w.astype(np.float32), b.astype(np.float32), act))
        if off != len(data) - 4:
            raise CorruptFile(f"{path}: unexpected trailing bytes")
        return Classifier(layers, (l, d), classes)
    except (struct.error, ValueError, IndexError, InvalidShape) as exc:
        raise CorruptFile(f"{path}: {exc}") from None
