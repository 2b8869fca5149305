"""Turn network outputs into field strings.

Each character takes the majority class of the grid cells it owns. Header
fields collect all characters of their class. Line-item characters are
grouped by the detected row box containing their center.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import char_ownership
from .ingest import HEADER_CLASSES, LINEITEM_CLASSES, N_FIELD_CLASSES, CharBox, DocumentPage, FieldClass
from .targets import AnchorSet, decode_box_deltas, iou_matrix

logger = logging.getLogger(__name__)

LINEITEM_KEYS = {
    FieldClass.LINEITEM_DESCRIPTION: "description",
    FieldClass.LINEITEM_QUANTITY: "quantity",
    FieldClass.LINEITEM_AMOUNT: "amount",
}


@dataclass
class DetectedBox:
    x: float
    y: float
    w: float
    h: float
    score: float

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass
class ExtractionResult:
    header: dict[str, str] = field(default_factory=dict)
    line_items: list[dict[str, str]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"header": dict(self.header), "line_items": [dict(li) for li in self.line_items]}
        if self.diagnostics:
            d["diagnostics"] = dict(self.diagnostics)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionResult":
        return cls(dict(d.get("header", {})), [dict(li) for li in d.get("line_items", [])],
                   dict(d.get("diagnostics", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ExtractionResult":
        return cls.from_dict(json.loads(text))


def decode_boxes(boxmask_logits: np.ndarray, box_deltas: np.ndarray, anchors: AnchorSet,
                 score_thresh: float = 0.5) -> list[DetectedBox]:
    """Boxes for anchors whose foreground probability exceeds ``score_thresh``.

    ``boxmask_logits`` is (H, W, 2 * n_a) with (background, foreground) pairs;
    ``box_deltas`` is (H, W, 4 * n_a). Decoded boxes are clipped to the grid.
    """
    z = np.asarray(boxmask_logits, np.float64).reshape(-1, 2)
    score = 1.0 / (1.0 + np.exp(z[:, 0] - z[:, 1]))
    keep = np.flatnonzero(score > score_thresh)
    if keep.size == 0:
        return []
    deltas = np.asarray(box_deltas, np.float64).reshape(-1, 4)[keep]
    boxes = decode_box_deltas(anchors.flat()[keep], deltas)
    x0 = np.clip(boxes[:, 0], 0, anchors.grid_w)
    y0 = np.clip(boxes[:, 1], 0, anchors.grid_h)
    x1 = np.clip(boxes[:, 0] + boxes[:, 2], 0, anchors.grid_w)
    y1 = np.clip(boxes[:, 1] + boxes[:, 3], 0, anchors.grid_h)
    out = []
    for k in range(len(keep)):
        if x1[k] > x0[k] and y1[k] > y0[k]:
            out.append(DetectedBox(x0[k], y0[k], x1[k] - x0[k], y1[k] - y0[k], float(score[keep[k]])))
    return out


def nms(boxes: list[DetectedBox], iou_thresh: float = 0.5) -> list[DetectedBox]:
    """Greedy suppression in descending score order."""
    if not boxes:
        return []
    order = sorted(range(len(boxes)), key=lambda k: -boxes[k].score)
    rects = np.array([boxes[k].rect for k in order])
    alive = np.ones(len(order), bool)
    kept = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(boxes[order[i]])
        rest = np.flatnonzero(alive[i + 1:]) + i + 1
        if rest.size:
            ov = iou_matrix(rects[i:i + 1], rects[rest])[0]
            alive[rest[ov >= iou_thresh]] = False
    return kept


def _rarity_rank(class_weights) -> np.ndarray:
    """Rank of each class for tie-breaking; higher rank wins."""
    if class_weights is None:
        # background is the most common class; others tie-break by lower index
        return np.concatenate([[0], np.arange(N_FIELD_CLASSES - 1, 0, -1)])
    w = np.asarray(class_weights, float)
    order = sorted(range(len(w)), key=lambda c: (w[c], -c))
    rank = np.empty(len(w), int)
    rank[order] = np.arange(len(w))
    return rank


def assign_char_classes(seg_argmax: np.ndarray, page: DocumentPage,
                        class_weights=None) -> np.ndarray:
    """Majority class over the cells each character owns; ties go to the rarer class."""
    grid_h, grid_w = seg_argmax.shape
    n = len(page.chars)
    if n == 0:
        return np.zeros(0, np.int64)
    owner = char_ownership(page, grid_h, grid_w)
    sel = owner >= 0
    counts = np.zeros((n, N_FIELD_CLASSES), np.int64)
    np.add.at(counts, (owner[sel], np.asarray(seg_argmax)[sel]), 1)
    rank = _rarity_rank(class_weights)
    score = counts * (N_FIELD_CLASSES + 1) + rank[None, :]
    classes = score.argmax(axis=1)
    classes[counts.sum(axis=1) == 0] = FieldClass.BACKGROUND
    return classes


def serialize_field(chars: list[CharBox]) -> str:
    """Reading-order string: lines top to bottom, characters left to right.

    Characters share a line when their vertical centers are within half the
    median character height; a space separates characters whose horizontal
    gap exceeds half the median character width.
    """
    if not chars:
        return ""
    med_h = float(np.median([c.h for c in chars]))
    med_w = float(np.median([c.w for c in chars]))
    ordered = sorted(chars, key=lambda c: (c.center[1], c.x))
    lines: list[list[CharBox]] = []
    ref = None
    for c in ordered:
        cy = c.center[1]
        if ref is None or abs(cy - ref) >= 0.5 * med_h:
            lines.append([])
            ref = cy
        lines[-1].append(c)
    out = []
    for line in lines:
        line.sort(key=lambda c: (c.x, c.y))
        parts = [line[0].char]
        for prev, cur in zip(line, line[1:]):
            if cur.x - (prev.x + prev.w) > 0.5 * med_w:
                parts.append(" ")
            parts.append(cur.char)
        out.append("".join(parts))
    return "\n".join(out)


def extract(page: DocumentPage, seg_argmax: np.ndarray, boxes: list[DetectedBox],
            class_weights=None) -> ExtractionResult:
    grid_h, grid_w = seg_argmax.shape
    classes = assign_char_classes(seg_argmax, page, class_weights)
    result = ExtractionResult()
    for cls in HEADER_CLASSES:
        chars = [c for c, k in zip(page.chars, classes) if k == cls]
        if chars:
            result.header[cls.key] = serialize_field(chars)

    ordered = sorted(boxes, key=lambda b: (b.y + b.h / 2, b.x))
    groups: list[dict[FieldClass, list[CharBox]]] = [{} for _ in ordered]
    dropped = 0
    sx, sy = grid_w / page.page_w, grid_h / page.page_h
    for c, k in zip(page.chars, classes):
        if k not in LINEITEM_KEYS:
            continue
        cx, cy = c.center
        gx, gy = cx * sx, cy * sy
        best = -1
        for g, b in enumerate(ordered):
            if b.x <= gx < b.x + b.w and b.y <= gy < b.y + b.h:
                if best < 0 or b.score > ordered[best].score:
                    best = g
        if best < 0:
            dropped += 1
            continue
        groups[best].setdefault(FieldClass(int(k)), []).append(c)
    for grp in groups:
        if not grp:
            continue
        result.line_items.append({LINEITEM_KEYS[cls]: serialize_field(grp.get(cls, []))
                                  for cls in LINEITEM_CLASSES})
    result.diagnostics = {"dropped_lineitem_chars": dropped, "n_boxes": len(boxes)}
    if dropped:
        logger.info("%d line-item characters outside every detected box", dropped)
    return result
