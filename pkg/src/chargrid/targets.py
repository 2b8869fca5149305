"""Training targets: segmentation labels, anchor assignment, box deltas, weights.

Rectangles are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, in grid
cells unless stated otherwise. Anchors are tiled one set per output cell and
centered on the cell center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import char_ownership, sample_points
from .ingest import N_FIELD_CLASSES, DocumentPage

FOREGROUND = 1
BACKGROUND = 0
IGNORE = -1

DEFAULT_ANCHOR_HEIGHTS = (4, 8, 16, 32)
ENET_C = 1.04


@dataclass
class AnchorSet:
    grid_h: int
    grid_w: int
    shapes: list[tuple[float, float]]
    boxes: np.ndarray  # (grid_h, grid_w, n_a, 4) as (x, y, w, h)

    @property
    def n_a(self) -> int:
        return len(self.shapes)

    def flat(self) -> np.ndarray:
        return self.boxes.reshape(-1, 4)


@dataclass
class TargetBundle:
    seg_labels: np.ndarray    # (H, W) int64
    anchor_state: np.ndarray  # (H, W, n_a) int8 in {1, 0, -1}
    box_deltas: np.ndarray    # (H, W, n_a, 4) as (t_y, t_x, t_h, t_w)
    gt_boxes: np.ndarray      # (G, 4)


def row_anchor_shapes(grid_w: int, heights=DEFAULT_ANCHOR_HEIGHTS) -> list[tuple[float, float]]:
    """Full-width row anchors, one per height, as (width, height)."""
    return [(float(grid_w), float(h)) for h in heights]


def rasterize_segmentation(page: DocumentPage, grid_h: int, grid_w: int) -> np.ndarray:
    """Per-cell class labels; only cells holding a character get a field class."""
    labels = np.zeros((grid_h, grid_w), dtype=np.int64)
    if not page.annotations:
        return labels
    has_char = char_ownership(page, grid_h, grid_w) >= 0
    sy = sample_points(page.page_h, grid_h)
    sx = sample_points(page.page_w, grid_w)
    # paint largest first so the smallest containing box wins; equal areas keep list order
    order = sorted(range(len(page.annotations)), key=lambda k: (-page.annotations[k].area, -k))
    for k in order:
        ann = page.annotations[k]
        i0, i1 = np.searchsorted(sy, [ann.y, ann.y + ann.h], side="left")
        j0, j1 = np.searchsorted(sx, [ann.x, ann.x + ann.w], side="left")
        blk = labels[i0:i1, j0:j1]
        blk[has_char[i0:i1, j0:j1]] = int(ann.field_class)
    return labels


def count_lineitems(page: DocumentPage) -> int:
    return len({a.instance_id for a in page.annotations
                if a.field_class.is_lineitem and a.instance_id > 0})


def lineitem_row_boxes(page: DocumentPage, grid_h: int, grid_w: int) -> np.ndarray:
    """One full-width box per line-item instance, sorted top to bottom."""
    spans: dict[int, list[float]] = {}
    for a in page.annotations:
        if not a.field_class.is_lineitem or a.instance_id <= 0:
            continue
        top, bottom = a.y, a.y + a.h
        if a.instance_id in spans:
            s = spans[a.instance_id]
            s[0], s[1] = min(s[0], top), max(s[1], bottom)
        else:
            spans[a.instance_id] = [top, bottom]
    scale = grid_h / page.page_h
    boxes = [(0.0, t * scale, float(grid_w), (b - t) * scale) for t, b in spans.values()]
    boxes.sort(key=lambda b: (b[1], b[3]))
    return np.array(boxes, dtype=np.float64).reshape(-1, 4)


def generate_anchors(grid_h: int, grid_w: int, shapes) -> AnchorSet:
    shapes = [(float(w), float(h)) for w, h in shapes]
    if not shapes or any(w <= 0 or h <= 0 for w, h in shapes):
        raise ValueError("anchor shapes must be non-empty and positive")
    cy = np.arange(grid_h) + 0.5
    cx = np.arange(grid_w) + 0.5
    wh = np.array(shapes)
    boxes = np.empty((grid_h, grid_w, len(shapes), 4))
    boxes[..., 0] = cx[None, :, None] - wh[None, None, :, 0] / 2
    boxes[..., 1] = cy[:, None, None] - wh[None, None, :, 1] / 2
    boxes[..., 2] = wh[:, 0]
    boxes[..., 3] = wh[:, 1]
    return AnchorSet(grid_h, grid_w, shapes, boxes)


def iou(a, b) -> float:
    return float(iou_matrix(np.asarray(a, float)[None], np.asarray(b, float)[None])[0, 0])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (M, 4) and (G, 4) rectangle arrays."""
    a = np.asarray(a, float).reshape(-1, 4)
    b = np.asarray(b, float).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0, None)
    inter = iw * ih
    union = a[:, 2:3] * a[:, 3:4] + b[:, 2] * b[:, 3] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def match_anchors(anchors: AnchorSet, gt_boxes: np.ndarray, fg_thresh: float = 0.5,
                  bg_thresh: float = 0.4) -> tuple[np.ndarray, np.ndarray]:
    """Anchor states (H, W, n_a) and index of the matched gt box per anchor (-1 if none).

    An anchor is foreground when its best IoU reaches ``fg_thresh`` or when it
    attains the best IoU of some gt box (all tied anchors count); background
    below ``bg_thresh``; ignored in between.
    """
    if not 0 <= bg_thresh <= fg_thresh <= 1:
        raise ValueError("need 0 <= bg_thresh <= fg_thresh <= 1")
    shape = anchors.boxes.shape[:3]
    gt_boxes = np.asarray(gt_boxes, float).reshape(-1, 4)
    if len(gt_boxes) == 0:
        return np.zeros(shape, np.int8), np.full(shape, -1, np.int64)
    ious = iou_matrix(anchors.flat(), gt_boxes)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(len(ious)), best_gt]
    state = np.full(len(ious), IGNORE, np.int8)
    state[best_iou < bg_thresh] = BACKGROUND
    state[best_iou >= fg_thresh] = FOREGROUND
    gt_best = ious.max(axis=0)
    for g in range(len(gt_boxes)):
        if gt_best[g] <= 0:
            continue
        forced = np.flatnonzero(ious[:, g] == gt_best[g])
        state[forced] = FOREGROUND
        best_gt[forced] = g
    matched = np.where(state == FOREGROUND, best_gt, -1)
    return state.reshape(shape), matched.reshape(shape)


def _centers(boxes: np.ndarray):
    boxes = np.asarray(boxes, float)
    w, h = boxes[..., 2], boxes[..., 3]
    return boxes[..., 0] + w / 2, boxes[..., 1] + h / 2, w, h


def encode_box_deltas(anchor, gt) -> np.ndarray:
    """(t_y, t_x, t_h, t_w) moving ``anchor`` onto ``gt``; broadcasts over leading axes."""
    xa, ya, wa, ha = _centers(anchor)
    x, y, w, h = _centers(gt)
    return np.stack([(y - ya) / ha, (x - xa) / wa, np.log(h / ha), np.log(w / wa)], axis=-1)


def decode_box_deltas(anchor, deltas) -> np.ndarray:
    xa, ya, wa, ha = _centers(anchor)
    deltas = np.asarray(deltas, float)
    ty, tx, th, tw = (deltas[..., k] for k in range(4))
    cx, cy = xa + tx * wa, ya + ty * ha
    w, h = wa * np.exp(tw), ha * np.exp(th)
    return np.stack([cx - w / 2, cy - h / 2, w, h], axis=-1)


def anchor_targets(anchors: AnchorSet, gt_boxes: np.ndarray, fg_thresh: float = 0.5,
                   bg_thresh: float = 0.4) -> tuple[np.ndarray, np.ndarray]:
    state, matched = match_anchors(anchors, gt_boxes, fg_thresh, bg_thresh)
    deltas = np.zeros(anchors.boxes.shape)
    fg = state == FOREGROUND
    if fg.any():
        gt = np.asarray(gt_boxes, float).reshape(-1, 4)
        deltas[fg] = encode_box_deltas(anchors.boxes[fg], gt[matched[fg]])
    return state, deltas


def encode_targets(page: DocumentPage, anchors: AnchorSet, fg_thresh: float = 0.5,
                   bg_thresh: float = 0.4) -> TargetBundle:
    h, w = anchors.grid_h, anchors.grid_w
    seg = rasterize_segmentation(page, h, w)
    gt = lineitem_row_boxes(page, h, w)
    state, deltas = anchor_targets(anchors, gt, fg_thresh, bg_thresh)
    return TargetBundle(seg, state, deltas, gt)


def enet_weights(freqs, c: float = ENET_C) -> np.ndarray:
    """1 / ln(c + p) per class frequency p."""
    return 1.0 / np.log(c + np.asarray(freqs, dtype=np.float64))


def compute_class_weights(label_maps, n_classes: int = N_FIELD_CLASSES,
                          c: float = ENET_C) -> np.ndarray:
    """Static weights from cell frequencies over a set of label maps.

    Negative labels (ignored cells) are left out of the counts.
    """
    counts = np.zeros(n_classes)
    for labels in label_maps:
        labels = np.asarray(labels).ravel()
        counts += np.bincount(labels[labels >= 0], minlength=n_classes)[:n_classes]
    total = counts.sum()
    if total == 0:
        raise ValueError("no labelled cells")
    return enet_weights(counts / total, c)


def compute_boxmask_weights(anchor_states, c: float = ENET_C) -> np.ndarray:
    """(background, foreground) weights over non-ignored anchors."""
    return compute_class_weights(anchor_states, n_classes=2, c=c)


def compute_sampling_weights(pages, ratio: float = 3.0, min_items: int = 3) -> np.ndarray:
    """Sampling distribution favouring pages with more than ``min_items`` line-items."""
    return sampling_weights_from_counts([count_lineitems(p) for p in pages], ratio, min_items)


def sampling_weights_from_counts(counts, ratio: float = 3.0, min_items: int = 3) -> np.ndarray:
    if ratio <= 0:
        raise ValueError("sampling ratio must be positive")
    w = np.array([ratio if n > min_items else 1.0 for n in counts])
    if len(w) == 0:
        return w
    return w / w.sum()
