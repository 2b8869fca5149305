"""Segmentation, box-mask and box-coordinate losses.

Both classification terms are class-weighted focal cross-entropies:
``w_y * (1 - p_y)**gamma * -log(p_y)`` with ``p`` the softmax over classes.
The gradient w.r.t. logit ``z_c`` is ``A * (delta_yc - p_c)`` where
``A = w_y * (gamma * (1 - p_y)**(gamma - 1) * p_y * log(p_y) - (1 - p_y)**gamma)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, add
from .ingest import N_FIELD_CLASSES
from .targets import FOREGROUND, IGNORE


@dataclass
class LossConfig:
    gamma: float = 2.0
    class_weights: list[float] = field(default_factory=lambda: [1.0] * N_FIELD_CLASSES)
    boxmask_weights: list[float] = field(default_factory=lambda: [1.0, 1.0])
    huber_delta: float = 1.0
    use_focal: bool = True
    use_class_weights: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("focal gamma must be >= 0")
        if min(self.class_weights) <= 0 or min(self.boxmask_weights) <= 0:
            raise ValueError("class weights must be positive")

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.use_focal else 0.0

    def seg_weights(self) -> np.ndarray:
        w = np.asarray(self.class_weights, float)
        return w if self.use_class_weights else np.ones_like(w)

    def mask_weights(self) -> np.ndarray:
        w = np.asarray(self.boxmask_weights, float)
        return w if self.use_class_weights else np.ones_like(w)


def focal_cross_entropy(logits: Tensor, labels: np.ndarray, class_weights, gamma: float = 2.0,
                        n_classes: int | None = None, mask: np.ndarray | None = None) -> Tensor:
    """Mean weighted focal cross-entropy over the entries selected by ``mask``.

    ``logits`` is viewed as (M, n_classes), ``n_classes`` defaulting to the
    last axis; ``labels`` and ``mask`` are flattened to length M.
    """
    k = n_classes or logits.shape[-1]
    z = logits.data.reshape(-1, k)
    y = np.asarray(labels).reshape(-1).astype(np.intp)
    if len(y) != len(z):
        raise ValueError(f"{len(y)} labels for {len(z)} logit rows")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    sel = np.ones(len(y), bool) if mask is None else np.asarray(mask).reshape(-1).astype(bool)
    count = int(sel.sum())
    dtype = logits.dtype
    if count == 0:
        return Tensor.from_op(np.zeros((), dtype), (logits,), lambda g: (np.zeros(logits.shape, dtype),))

    zs = z.astype(np.float64)
    zs = zs - zs.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1))
    rows = np.arange(len(y))
    logp = zs[rows, y] - lse
    p = np.exp(logp)
    omp = -np.expm1(logp)
    w = np.asarray(class_weights, np.float64)[y] * sel
    focal = omp ** gamma
    loss = np.sum(w * focal * -logp) / count

    def bw(g):
        if gamma == 0:
            dfocal = np.zeros_like(omp)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                dfocal = np.where(omp > 0, gamma * omp ** (gamma - 1), 0.0)
        a = w * (dfocal * p * logp - focal) / count
        probs = np.exp(zs - lse[:, None])
        grad = -a[:, None] * probs
        grad[rows, y] += a
        return ((g * grad).astype(dtype).reshape(logits.shape),)

    return Tensor.from_op(np.asarray(loss, dtype), (logits,), bw)


def huber_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray, delta: float = 1.0,
               group: int = 4) -> Tensor:
    """Huber penalty summed over ``group`` coordinates, averaged over selected rows."""
    r = pred.data.reshape(-1, group).astype(np.float64) - np.asarray(target, np.float64).reshape(-1, group)
    sel = np.asarray(mask).reshape(-1).astype(bool)
    if len(sel) != len(r):
        raise ValueError(f"mask of length {len(sel)} for {len(r)} rows")
    count = int(sel.sum())
    dtype = pred.dtype
    if count == 0:
        return Tensor.from_op(np.zeros((), dtype), (pred,), lambda g: (np.zeros(pred.shape, dtype),))
    a = np.abs(r)
    per = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    loss = np.sum(per[sel]) / count

    def bw(g):
        grad = np.clip(r, -delta, delta) * sel[:, None] / count
        return ((g * grad).astype(dtype).reshape(pred.shape),)

    return Tensor.from_op(np.asarray(loss, dtype), (pred,), bw)


def seg_loss(seg_logits: Tensor, seg_labels: np.ndarray, cfg: LossConfig) -> Tensor:
    n = seg_logits.shape[-1]
    labels = np.asarray(seg_labels)
    if labels.size and labels.max() >= n:
        raise ValueError(f"segmentation label {labels.max()} >= {n} classes")
    return focal_cross_entropy(seg_logits, labels, cfg.seg_weights(), cfg.effective_gamma)


def boxmask_loss(boxmask_logits: Tensor, anchor_state: np.ndarray, cfg: LossConfig) -> Tensor:
    """Two-way (background, foreground) focal CE per anchor; ignored anchors are masked."""
    state = np.asarray(anchor_state).reshape(-1)
    labels = (state == FOREGROUND).astype(np.intp)
    return focal_cross_entropy(boxmask_logits, labels, cfg.mask_weights(), cfg.effective_gamma,
                               n_classes=2, mask=state != IGNORE)


def boxcoord_loss(box_deltas_pred: Tensor, box_deltas_target: np.ndarray,
                  anchor_state: np.ndarray, delta: float = 1.0) -> Tensor:
    return huber_loss(box_deltas_pred, box_deltas_target,
                      np.asarray(anchor_state).reshape(-1) == FOREGROUND, delta)


def total_loss(l_seg: Tensor, l_boxmask: Tensor, l_boxcoord: Tensor) -> Tensor:
    return add(add(l_seg, l_boxmask), l_boxcoord)
