"""Page-level inference: network forward, box decoding, extraction, overlays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .extract import DetectedBox, ExtractionResult, decode_boxes, extract, nms
from .grid import Vocabulary, prepare_input
from .ingest import DocumentPage
from .net import ChargridNet
from .train import TrainConfig, load_checkpoint

# one RGB colour per segmentation class, background first
CLASS_COLORS = np.array([
    (255, 255, 255), (230, 25, 75), (60, 180, 75), (255, 140, 0), (0, 130, 200),
    (145, 30, 180), (70, 200, 200), (240, 50, 230), (128, 128, 0),
], dtype=np.uint8)


@dataclass
class PagePrediction:
    seg_argmax: np.ndarray
    boxes: list[DetectedBox]
    result: ExtractionResult


class Predictor:
    def __init__(self, net: ChargridNet, vocab: Vocabulary, cfg: TrainConfig,
                 class_weights=None):
        if vocab.n_classes != cfg.network.n_vocab:
            raise ValueError(f"vocabulary has {vocab.n_classes} classes, network expects "
                             f"{cfg.network.n_vocab}")
        self.net, self.vocab, self.cfg = net, vocab, cfg
        self.class_weights = class_weights
        self.anchors = cfg.anchors()

    @classmethod
    def from_checkpoint(cls, directory, vocab: Vocabulary | None = None) -> "Predictor":
        state = load_checkpoint(directory)
        stored = state.extra.get("vocab")
        if vocab is None:
            if stored is None:
                raise ValueError("checkpoint has no vocabulary; pass one explicitly")
            vocab = Vocabulary.from_json(stored)
        elif stored is not None and Vocabulary.from_json(stored).to_json() != vocab.to_json():
            raise ValueError("vocabulary differs from the one the checkpoint was trained with")
        return cls(state.net, vocab, state.cfg, state.loss_cfg.class_weights)

    def inputs(self, pages) -> np.ndarray:
        h, w = self.cfg.grid_shape
        return np.stack([prepare_input(p, self.vocab, h, w, self.cfg.stage1_scale) for p in pages])

    def predict(self, pages: list[DocumentPage], batch_size: int = 4) -> list[PagePrediction]:
        out = []
        for k in range(0, len(pages), batch_size):
            chunk = pages[k:k + batch_size]
            seg, mask, coord = self.net.forward(self.inputs(chunk), training=False)
            for page, s, m, c in zip(chunk, seg.data, mask.data, coord.data):
                argmax = s.argmax(axis=-1)
                boxes = nms(decode_boxes(m, c, self.anchors, self.cfg.score_thresh), self.cfg.nms_iou)
                result = extract(page, argmax, boxes, self.class_weights)
                out.append(PagePrediction(argmax, boxes, result))
        return out

    def predict_page(self, page: DocumentPage) -> PagePrediction:
        return self.predict([page])[0]


def render_overlay(one_hot_input: np.ndarray, seg_argmax: np.ndarray, boxes, scale: int = 4):
    """RGB image: class colours where characters are, dark grey for unlabelled text, box outlines."""
    from PIL import Image, ImageDraw

    has_char = one_hot_input.argmax(axis=-1) != 0
    rgb = CLASS_COLORS[np.clip(seg_argmax, 0, len(CLASS_COLORS) - 1)].copy()
    rgb[has_char & (seg_argmax == 0)] = (90, 90, 90)
    rgb[~has_char & (seg_argmax != 0)] = rgb[~has_char & (seg_argmax != 0)] // 2 + 127
    img = Image.fromarray(rgb).resize((rgb.shape[1] * scale, rgb.shape[0] * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    for b in boxes:
        draw.rectangle([b.x * scale, b.y * scale, (b.x + b.w) * scale - 1, (b.y + b.h) * scale - 1],
                       outline=(0, 0, 0), width=1)
    return img
