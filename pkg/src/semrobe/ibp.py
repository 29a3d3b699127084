"""Interval bound propagation (IBP) for robust training and continuous certification.

Bounds are propagated in center/radius form through each dense layer
(``center' = W c + b``, ``radius' = |W| r``) and clamped through ReLU.  Only
L-inf input balls are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddedText, parse_norm
from .errors import LabelOutOfRange, NormNotSupported, ShapeMismatch
from .model import (
    Classifier,
    TrainConfig,
    TrainResult,
    _as_batch,
    _forward_cache,
    as_arrays,
    backward,
    ce_rows,
    fit,
    predict,
)

CERT_TOL = 1e-9


@dataclass(frozen=True)
class IntervalTensor:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.lo.shape != self.hi.shape:
            raise ShapeMismatch(f"lo {self.lo.shape} vs hi {self.hi.shape}")
        if not (np.isfinite(self.lo).all() and np.isfinite(self.hi).all()):
            raise ValueError("interval bounds must be finite")
        if (self.lo > self.hi).any():
            raise ValueError("interval has lo > hi")

    @property
    def center(self):
        return (self.lo + self.hi) / 2

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, values, tol: float = 0.0) -> bool:
        values = np.asarray(values)
        return bool(((values >= self.lo - tol) & (values <= self.hi + tol)).all())


def _ibp_pass(m: Classifier, x: np.ndarray, eps):
    """Forward bounds; returns per-layer cache ``(c, r, zlo, zhi)`` and logit bounds."""
    lo, hi = x - eps, x + eps
    cache = []
    last = len(m.layers) - 1
    for i, layer in enumerate(m.layers):
        c = (hi + lo) / 2
        r = (hi - lo) / 2
        zc = c @ layer.weights.T + layer.bias
        zr = r @ np.abs(layer.weights).T
        zlo, zhi = zc - zr, zc + zr
        cache.append((c, r, zlo, zhi))
        if i < last and layer.activation == "relu":
            lo, hi = np.maximum(zlo, 0), np.maximum(zhi, 0)
        else:
            lo, hi = zlo, zhi
    return cache, lo, hi


def _ibp_backward(m: Classifier, cache, dlo: np.ndarray, dhi: np.ndarray) -> list[np.ndarray]:
    grads: list[np.ndarray] = [None] * (2 * len(m.layers))
    for i in range(len(m.layers) - 1, -1, -1):
        w = m.layers[i].weights
        c, r, _, _ = cache[i]
        dzc = dlo + dhi
        dzr = dhi - dlo
        grads[2 * i] = dzc.T @ c + np.sign(w) * (dzr.T @ r)
        grads[2 * i + 1] = dzc.sum(axis=0)
        if i:
            dc = dzc @ w
            dr = dzr @ np.abs(w)
            _, _, plo, phi = cache[i - 1]
            dlo = (dc - dr) / 2 * (plo > 0)
            dhi = (dc + dr) / 2 * (phi > 0)
    return grads


def interval_forward(m: Classifier, x, epsilon: float) -> IntervalTensor:
    """Sound pre-softmax logit bounds over the L-inf ball of radius ``epsilon`` around ``x``.

    Computed in float64 regardless of the model's storage dtype.  Perturbation
    covers every input coordinate, padding rows included.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    m64 = m.astype(np.float64)
    xb, single = _as_batch(m64, x)
    _, lo, hi = _ibp_pass(m64, xb, epsilon)
    if single:
        lo, hi = lo[0], hi[0]
    return IntervalTensor(lo, hi)


def worst_case_logits(iv: IntervalTensor, true_label) -> np.ndarray:
    """True class at its lower bound, all other classes at their upper bound."""
    labels = np.asarray(true_label)
    k = iv.lo.shape[-1]
    if (labels < 0).any() or (labels >= k).any():
        raise LabelOutOfRange(f"label outside [0, {k})")
    onehot = np.eye(k, dtype=bool)[labels]
    return np.where(onehot, iv.lo, iv.hi)


@dataclass(frozen=True)
class RobustTrainConfig:
    epsilon_target: float
    kappa: float = 0.5
    ramp_epochs: int | None = None  # defaults to half of base.epochs
    norm: float = math.inf
    base: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.epsilon_target < 0:
            raise ValueError("epsilon_target must be >= 0")
        if not 0 <= self.kappa <= 1:
            raise ValueError("kappa must lie in [0, 1]")
        if parse_norm(self.norm) != math.inf:
            raise NormNotSupported("IBP supports only the L-inf norm")

    @property
    def ramp(self) -> int:
        return self.base.epochs // 2 if self.ramp_epochs is None else self.ramp_epochs

    def epsilon_at(self, epoch: int) -> float:
        """Linear ramp from 0 at epoch 0 to ``epsilon_target`` at ``ramp`` epochs."""
        if self.ramp <= 0:
            return self.epsilon_target
        return self.epsilon_target * min(1.0, epoch / self.ramp)


def ibp_loss(m: Classifier, batch, cfg: RobustTrainConfig, epoch: int):
    """``kappa * CE(nominal) + (1 - kappa) * CE(worst case)`` and its parameter gradients."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    x, y = batch if isinstance(batch, tuple) else as_arrays(m, batch)
    eps = np.asarray(cfg.epsilon_at(epoch), dtype=m.dtype)
    kappa = cfg.kappa

    pre, acts = _forward_cache(m, x)
    loss_nom, dz_nom = ce_rows(pre[-1], y)
    g_nom = backward(m, pre, acts, dz_nom.astype(m.dtype))
    if kappa == 1.0:
        return loss_nom, g_nom

    cache, lo, hi = _ibp_pass(m, x, eps)
    onehot = np.eye(m.num_classes, dtype=bool)[y]
    z_wc = np.where(onehot, lo, hi)
    loss_wc, dz_wc = ce_rows(z_wc, y)
    dz_wc = dz_wc.astype(m.dtype)
    g_wc = _ibp_backward(m, cache, np.where(onehot, dz_wc, 0), np.where(onehot, 0, dz_wc))

    loss = kappa * loss_nom + (1 - kappa) * loss_wc
    grads = [kappa * a + (1 - kappa) * b for a, b in zip(g_nom, g_wc)]
    return loss, grads


def train_robust(m: Classifier, dataset, cfg: RobustTrainConfig) -> TrainResult:
    x, y = as_arrays(m, dataset)
    return fit(m, x, y, cfg.base, lambda model, xb, yb, epoch: ibp_loss(model, (xb, yb), cfg, epoch))


@dataclass(frozen=True)
class Certificate:
    verdict: str  # "certified" | "unknown"
    margin: float
    misclassified: bool = False


def certify_continuous(m: Classifier, x, epsilon: float, label: int) -> Certificate:
    """Sound, incomplete check that every point of the L-inf ball keeps ``label``.

    ``unknown`` does not imply an adversarial point exists.
    """
    iv = interval_forward(m, x, epsilon)
    if iv.lo.ndim != 1:
        raise ShapeMismatch("certify_continuous takes a single input")
    others = np.delete(iv.hi, label)
    margin = float(iv.lo[label] - others.max())
    misclassified = predict(m.astype(np.float64), x.matrix if isinstance(x, EmbeddedText) else x) != label
    if misclassified:
        return Certificate("unknown", margin, True)
    return Certificate("certified" if margin > CERT_TOL else "unknown", margin)


def certify_batch(m: Classifier, x: np.ndarray, epsilon: float, labels) -> list[Certificate]:
    iv = interval_forward(m, x, epsilon)
    labels = np.asarray(labels)
    preds = predict(m.astype(np.float64), x)
    out = []
    for i, lab in enumerate(labels):
        margin = float(iv.lo[i, lab] - np.delete(iv.hi[i], lab).max())
        if preds[i] != lab:
            out.append(Certificate("unknown", margin, True))
        else:
            out.append(Certificate("certified" if margin > CERT_TOL else "unknown", margin))
    return out
