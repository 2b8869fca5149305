"""Optimizer, augmentation, dataset preparation and the training loop.

One iteration samples a mini-batch by the page sampling weights, applies a
random pad-and-crop to each sample, recomputes the anchor targets for the
shifted row boxes, runs the network in training mode and takes an SGD step
on the summed loss. Checkpoints carry parameters, momentum buffers, running
statistics and both random streams, so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .engine import backward
from .grid import Vocabulary, prepare_input
from .ingest import DocumentPage
from .losses import LossConfig, boxcoord_loss, boxmask_loss, seg_loss, total_loss
from .net import ChargridNet, NetworkConfig, load_network, save_network
from .targets import (DEFAULT_ANCHOR_HEIGHTS, IGNORE, AnchorSet, anchor_targets, compute_boxmask_weights,
                      compute_class_weights, generate_anchors, lineitem_row_boxes,
                      rasterize_segmentation, row_anchor_shapes, sampling_weights_from_counts)

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "l_seg", "l_boxmask", "l_boxcoord", "l_total", "lr", "wall_time")


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite."""


@dataclass
class OptimizerConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 2
    max_iterations: int = 1000
    warmup_iterations: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.batch_size < 1 or self.max_iterations < 0:
            raise ValueError("invalid optimizer settings")

    def lr_at(self, iteration: int) -> float:
        if self.warmup_iterations > 0 and iteration < self.warmup_iterations:
            return self.lr * (iteration + 1) / self.warmup_iterations
        return self.lr


@dataclass
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gamma: float = 2.0
    huber_delta: float = 1.0
    use_focal: bool = True
    use_class_weights: bool = True
    anchor_heights: tuple[float, ...] = DEFAULT_ANCHOR_HEIGHTS
    fg_thresh: float = 0.5
    bg_thresh: float = 0.4
    crop_pad: int = 16
    stage1_scale: int = 2
    sampling_ratio: float = 3.0
    sampling_min_items: int = 3
    checkpoint_every: int = 1000
    score_thresh: float = 0.5
    nms_iou: float = 0.5

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkConfig.from_dict(self.network)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.anchor_heights = tuple(float(h) for h in self.anchor_heights)
        if len(self.anchor_heights) != self.network.n_anchors:
            raise ValueError(f"{len(self.anchor_heights)} anchor heights for "
                             f"n_anchors={self.network.n_anchors}")
        if self.crop_pad < 0:
            raise ValueError("crop_pad must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.network.input_h, self.network.input_w

    def anchors(self) -> AnchorSet:
        h, w = self.grid_shape
        return generate_anchors(h, w, row_anchor_shapes(w, self.anchor_heights))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = self.network.to_dict()
        d["anchor_heights"] = list(self.anchor_heights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def toy_config(**overrides) -> TrainConfig:
    """Small network for desk-scale runs: C=16, 128x96 input, 40 vocabulary classes.

    Anchor heights and the crop padding are scaled down with the grid.
    """
    net = NetworkConfig(base_channels=16, n_vocab=40, input_h=128, input_w=96)
    kw = dict(network=net, anchor_heights=(2, 4, 8, 16), crop_pad=6,
              optimizer=OptimizerConfig(max_iterations=3000))
    kw.update(overrides)
    return TrainConfig(**kw)


# -- dataset ------------------------------------------------------------------

@dataclass
class TrainingSet:
    """Un-augmented network inputs and targets at the network resolution."""

    inputs: np.ndarray            # (N, H, W, n_vocab) float32
    seg_labels: np.ndarray        # (N, H, W) int64
    gt_boxes: list[np.ndarray]    # per page (G, 4) xywh in grid cells
    names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def lineitem_counts(self) -> list[int]:
        return [len(b) for b in self.gt_boxes]


def page_arrays(page: DocumentPage, vocab: Vocabulary, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Input, segmentation labels and row boxes for one page."""
    h, w = cfg.grid_shape
    return {"input": prepare_input(page, vocab, h, w, cfg.stage1_scale),
            "seg_labels": rasterize_segmentation(page, h, w),
            "gt_boxes": lineitem_row_boxes(page, h, w)}


def prepare_training_set(pages, vocab: Vocabulary, cfg: TrainConfig, names=None) -> TrainingSet:
    if not pages:
        raise ValueError("empty training set")
    if vocab.n_classes != cfg.network.n_vocab:
        raise ValueError(f"vocabulary has {vocab.n_classes} classes, network expects "
                         f"{cfg.network.n_vocab}")
    arrays = [page_arrays(p, vocab, cfg) for p in pages]
    return TrainingSet(np.stack([a["input"] for a in arrays]),
                       np.stack([a["seg_labels"] for a in arrays]),
                       [a["gt_boxes"] for a in arrays],
                       list(names) if names is not None else [f"{k:04d}" for k in range(len(pages))])


def save_page_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    container.save(path, arrays)


def load_training_set(paths) -> TrainingSet:
    """Training set from ``.cgt`` files written by :func:`save_page_arrays`."""
    arrays = [container.load(p) for p in paths]
    if not arrays:
        raise ValueError("empty training set")
    return TrainingSet(np.stack([a["input"] for a in arrays]),
                       np.stack([a["seg_labels"] for a in arrays]).astype(np.int64),
                       [a["gt_boxes"].reshape(-1, 4) for a in arrays],
                       [Path(p).stem for p in paths])


# -- optimizer and augmentation -----------------------------------------------

def sgd_step(params, opt: OptimizerConfig, lr: float | None = None) -> None:
    """Momentum SGD with weight decay coupled into the velocity (kernels only)."""
    lr = opt.lr if lr is None else lr
    for p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDiverged(f"non-finite gradient in parameter {p.name!r}")
        step = p.grad
        if p.decay and opt.weight_decay:
            step = step + opt.weight_decay * p.data
        p.momentum *= opt.momentum
        p.momentum += step
        p.data -= lr * p.momentum


def pad_crop(arr: np.ndarray, pad: int, dy: int, dx: int, fill) -> np.ndarray:
    """Pad the two leading axes by ``pad`` with ``fill`` and crop the original size at (dy, dx)."""
    h, w = arr.shape[:2]
    out = np.empty_like(arr)
    out[...] = fill
    # source window in original coordinates
    oy, ox = dy - pad, dx - pad
    y0, y1 = max(oy, 0), min(oy + h, h)
    x0, x1 = max(ox, 0), min(ox + w, w)
    if y1 > y0 and x1 > x0:
        out[y0 - oy:y1 - oy, x0 - ox:x1 - ox] = arr[y0:y1, x0:x1]
    return out


def shift_row_boxes(boxes: np.ndarray, shift_y: float, grid_h: int) -> np.ndarray:
    """Move full-width row boxes vertically and clip to the grid; emptied boxes are dropped."""
    b = np.asarray(boxes, float).reshape(-1, 4).copy()
    top = np.clip(b[:, 1] + shift_y, 0, grid_h)
    bottom = np.clip(b[:, 1] + b[:, 3] + shift_y, 0, grid_h)
    b[:, 1], b[:, 3] = top, bottom - top
    return b[b[:, 3] > 0]


def random_crop_augment(one_hot_input: np.ndarray, seg_labels: np.ndarray, gt_boxes: np.ndarray,
                        pad: int, rng: np.random.Generator):
    """Pad by ``pad`` cells on all sides and crop the original size at a random offset.

    Returns (input, seg_labels, gt_boxes, (dy, dx)). Content moves by
    ``(pad - dy, pad - dx)``; row boxes stay full width and move vertically.
    """
    dy, dx = (int(v) for v in rng.integers(0, 2 * pad + 1, size=2))
    if dy == pad and dx == pad:
        return one_hot_input, seg_labels, np.asarray(gt_boxes, float).reshape(-1, 4), (dy, dx)
    bg = np.zeros(one_hot_input.shape[-1], one_hot_input.dtype)
    bg[0] = 1
    x = pad_crop(one_hot_input, pad, dy, dx, bg)
    y = pad_crop(seg_labels, pad, dy, dx, 0)
    boxes = shift_row_boxes(gt_boxes, pad - dy, seg_labels.shape[0])
    return x, y, boxes, (dy, dx)


# -- loop ---------------------------------------------------------------------

def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


@dataclass
class TrainState:
    net: ChargridNet
    cfg: TrainConfig
    loss_cfg: LossConfig
    rng: np.random.Generator
    iteration: int = 0
    extra: dict = field(default_factory=dict)


def make_loss_config(cfg: TrainConfig, data: TrainingSet, anchors: AnchorSet) -> LossConfig:
    """Loss settings with class weights computed from the un-augmented targets."""
    class_w = compute_class_weights(data.seg_labels, cfg.network.n_seg_classes)
    states = [anchor_targets(anchors, b, cfg.fg_thresh, cfg.bg_thresh)[0] for b in data.gt_boxes]
    mask_w = compute_boxmask_weights(states)
    return LossConfig(gamma=cfg.gamma, class_weights=[float(v) for v in class_w],
                      boxmask_weights=[float(v) for v in mask_w], huber_delta=cfg.huber_delta,
                      use_focal=cfg.use_focal, use_class_weights=cfg.use_class_weights)


def assemble_batch(data: TrainingSet, idx, cfg: TrainConfig, anchors: AnchorSet,
                   rng: np.random.Generator | None):
    """Stacked (inputs, seg labels, anchor states, box deltas); no augmentation when rng is None."""
    xs, ys, states, deltas = [], [], [], []
    for k in idx:
        x, y, boxes = data.inputs[k], data.seg_labels[k], data.gt_boxes[k]
        if rng is not None and cfg.crop_pad > 0:
            x, y, boxes, _ = random_crop_augment(x, y, boxes, cfg.crop_pad, rng)
        s, d = anchor_targets(anchors, boxes, cfg.fg_thresh, cfg.bg_thresh)
        xs.append(x)
        ys.append(y)
        states.append(s)
        deltas.append(d)
    return np.stack(xs), np.stack(ys), np.stack(states), np.stack(deltas)


def train_step(net: ChargridNet, batch, loss_cfg: LossConfig, opt: OptimizerConfig,
               lr: float) -> tuple[float, float, float, float]:
    x, labels, states, deltas = batch
    seg, mask, coord = net.forward(x, training=True)
    l_seg = seg_loss(seg, labels, loss_cfg)
    l_mask = boxmask_loss(mask, states, loss_cfg)
    l_coord = boxcoord_loss(coord, deltas, states, loss_cfg.huber_delta)
    loss = total_loss(l_seg, l_mask, l_coord)
    values = (l_seg.item(), l_mask.item(), l_coord.item(), loss.item())
    if not np.isfinite(values[3]):
        raise TrainingDiverged(f"non-finite loss {values}")
    net.zero_grad()
    backward(loss)
    sgd_step(net.parameters(), opt, lr)
    return values


def save_checkpoint(state: TrainState, directory, extra: dict | None = None) -> Path:
    meta = {"iteration": state.iteration,
            "train_config": state.cfg.to_dict(),
            "loss": asdict(state.loss_cfg),
            "rng_train": _rng_state(state.rng),
            "rng_dropout": _rng_state(state.net.rng)}
    meta.update(extra or {})
    save_network(state.net, directory, extra=meta, with_momentum=True)
    return Path(directory)


def load_checkpoint(directory) -> TrainState:
    net, extra = load_network(directory)
    cfg = TrainConfig.from_dict(extra["train_config"])
    rng = np.random.default_rng()
    _set_rng_state(rng, extra["rng_train"])
    _set_rng_state(net.rng, extra["rng_dropout"])
    return TrainState(net, cfg, LossConfig(**extra["loss"]), rng, int(extra["iteration"]), extra)


def _open_log(path: Path, resume_from: int | None):
    if resume_from is None or not path.exists():
        fh = path.open("w", newline="")
        csv.writer(fh).writerow(LOG_COLUMNS)
        return fh
    # keep rows up to the resumed iteration
    with path.open(newline="") as f:
        rows = [r for r in csv.reader(f)]
    fh = path.open("w", newline="")
    w = csv.writer(fh)
    w.writerow(LOG_COLUMNS)
    w.writerows(r for r in rows[1:] if r and int(r[0]) <= resume_from)
    return fh


def train(data: TrainingSet, cfg: TrainConfig, seed: int = 0, out_dir=None,
          resume_from=None, extra: dict | None = None, max_iterations: int | None = None,
          callback=None) -> tuple[TrainState, list[tuple]]:
    """Run the training loop; returns the final state and the log rows.

    With ``out_dir`` set, ``train_log.csv`` is written there, checkpoints go
    to ``out_dir/checkpoints/iter_NNNNNN`` every ``cfg.checkpoint_every``
    iterations and the final model to ``out_dir`` itself. ``resume_from``
    names a checkpoint directory to continue from.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    anchors = cfg.anchors()
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.cfg.to_dict() != cfg.to_dict():
            raise ValueError("checkpoint was trained with a different configuration")
    else:
        net = ChargridNet(cfg.network, seed=seed)
        rng = np.random.default_rng([seed, 0])
        state = TrainState(net, cfg, make_loss_config(cfg, data, anchors), rng)
    opt = cfg.optimizer
    total = opt.max_iterations if max_iterations is None else max_iterations
    probs = sampling_weights_from_counts(data.lineitem_counts, cfg.sampling_ratio,
                                         cfg.sampling_min_items)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_config.json").write_text(cfg.dumps())
        log_fh = _open_log(out / "train_log.csv", state.iteration if resume_from else None)
    writer = csv.writer(log_fh) if log_fh else None
    rows = []
    last_ckpt = None
    start = time.perf_counter()
    try:
        while state.iteration < total:
            it = state.iteration
            idx = state.rng.choice(len(data), size=opt.batch_size, p=probs)
            batch = assemble_batch(data, idx, cfg, anchors, state.rng)
            lr = opt.lr_at(it)
            try:
                values = train_step(state.net, batch, state.loss_cfg, opt, lr)
            except TrainingDiverged as exc:
                where = f"; last checkpoint {last_ckpt}" if last_ckpt else ""
                raise TrainingDiverged(f"iteration {it + 1}: {exc}{where}") from exc
            state.iteration = it + 1
            row = (state.iteration, *values, lr, time.perf_counter() - start)
            rows.append(row)
            if writer:
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
            if callback is not None:
                callback(state, row)
            if out is not None and state.iteration % cfg.checkpoint_every == 0:
                last_ckpt = save_checkpoint(state, out / "checkpoints" / f"iter_{state.iteration:06d}",
                                            extra)
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    if out is not None:
        save_checkpoint(state, out, extra)
    return state, rows
