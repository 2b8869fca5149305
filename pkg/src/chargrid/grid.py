"""Chargrid construction, vocabulary encoding and two-stage downsampling.

Grid cell ``(i, j)`` samples the page at its center,
``((i + 0.5) * page_h / grid_h, (j + 0.5) * page_w / grid_w)``. A cell takes
the index of the character box containing that point; when several boxes
contain it, the box with the nearest center wins (lower list index on exact
ties), and cells covered by no box are background (0).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .ingest import DocumentPage

BACKGROUND = 0
UNKNOWN = 1
VOCAB_FORMAT = "chargrid-vocab"
VOCAB_VERSION = 1


@dataclass
class Vocabulary:
    char_to_index: dict[str, int]
    n_classes: int
    lowercase: bool = True

    def __post_init__(self):
        idx = sorted(self.char_to_index.values())
        if idx != list(range(2, 2 + len(idx))) or 2 + len(idx) > self.n_classes:
            raise ValueError("vocabulary indices must be dense in [2, n_classes)")

    def normalize(self, ch: str) -> str:
        return ch.lower() if self.lowercase else ch

    def encode(self, ch: str) -> int:
        return self.char_to_index.get(self.normalize(ch), UNKNOWN)

    def to_json(self) -> str:
        return json.dumps({
            "format": VOCAB_FORMAT,
            "version": VOCAB_VERSION,
            "n_classes": self.n_classes,
            "lowercase": self.lowercase,
            "chars": self.char_to_index,
        }, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        data = json.loads(text)
        if data.get("format") != VOCAB_FORMAT:
            raise ValueError("not a vocabulary file")
        if data.get("version") != VOCAB_VERSION:
            raise ValueError(f"unsupported vocabulary version {data.get('version')}")
        return cls({k: int(v) for k, v in data["chars"].items()},
                   int(data["n_classes"]), bool(data["lowercase"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def build_vocabulary(corpus: list[DocumentPage], n_classes: int = 54,
                     lowercase: bool = True) -> Vocabulary:
    """Map the ``n_classes - 2`` most frequent characters to indices 2, 3, ...

    Order is descending count, ties by ascending code point.
    """
    if n_classes < 3:
        raise ValueError("n_classes must be at least 3 (background, unknown, one character)")
    if not corpus:
        raise ValueError("empty corpus")
    counts = Counter()
    for page in corpus:
        counts.update(c.char.lower() if lowercase else c.char for c in page.chars)
    if not counts:
        raise ValueError("corpus contains no characters")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))
    chars = [ch for ch, _ in ranked[: n_classes - 2]]
    return Vocabulary({ch: 2 + k for k, ch in enumerate(chars)}, n_classes, lowercase)


def sample_points(page_size: int, n_cells: int) -> np.ndarray:
    """Page coordinate of each cell center along one axis.

    Computed as one division of exact integers, so a center that falls on an
    integer box edge is exactly that integer.
    """
    return (2 * np.arange(n_cells) + 1) * page_size / (2 * n_cells)


def char_ownership(page: DocumentPage, grid_h: int, grid_w: int) -> np.ndarray:
    """Index of the character owning each cell, -1 where no box covers it."""
    if grid_h < 1 or grid_w < 1:
        raise ValueError("grid dimensions must be positive")
    sy = sample_points(page.page_h, grid_h)
    sx = sample_points(page.page_w, grid_w)
    owner = np.full((grid_h, grid_w), -1, dtype=np.int64)
    best = np.full((grid_h, grid_w), np.inf)
    for k, cb in enumerate(page.chars):
        i0, i1 = np.searchsorted(sy, [cb.y, cb.y + cb.h], side="left")
        j0, j1 = np.searchsorted(sx, [cb.x, cb.x + cb.w], side="left")
        if i0 >= i1 or j0 >= j1:
            continue
        cx, cy = cb.center
        d = (sx[None, j0:j1] - cx) ** 2 + (sy[i0:i1, None] - cy) ** 2
        blk_best = best[i0:i1, j0:j1]
        win = d < blk_best
        blk_best[win] = d[win]
        owner[i0:i1, j0:j1][win] = k
    return owner


def encode_chars(page: DocumentPage, vocab: Vocabulary) -> np.ndarray:
    return np.array([vocab.encode(c.char) for c in page.chars], dtype=np.int64)


def build_chargrid(page: DocumentPage, vocab: Vocabulary, grid_h: int, grid_w: int) -> np.ndarray:
    owner = char_ownership(page, grid_h, grid_w)
    codes = np.concatenate([[BACKGROUND], encode_chars(page, vocab)])
    return codes[owner + 1].astype(np.int32)


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index floor((i + 0.5) * n_in / n_out), in exact integer arithmetic."""
    return ((2 * np.arange(n_out) + 1) * n_in) // (2 * n_out)


def downsample_tokens(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    rows = nearest_indices(grid.shape[0], out_h)
    cols = nearest_indices(grid.shape[1], out_w)
    return grid[np.ix_(rows, cols)]


def one_hot(grid: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.size and (grid.max() >= n_classes or grid.min() < 0):
        raise ValueError(f"grid value outside [0, {n_classes})")
    out = np.zeros(grid.shape + (n_classes,), dtype=dtype)
    np.put_along_axis(out, grid[..., None].astype(np.intp), 1, axis=-1)
    return out


def _bilinear_taps(n_in: int, n_out: int):
    src = (2 * np.arange(n_out) + 1) * n_in / (2 * n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def downsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resampling of an H x W x C tensor.

    Half-pixel centers (no corner alignment), clamped at the edges.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be positive")
    dtype = grid.dtype
    i0, i1, fy = _bilinear_taps(grid.shape[0], out_h)
    fy = fy.astype(dtype)[:, None, None]
    rows = grid[i0] * (1 - fy) + grid[i1] * fy
    j0, j1, fx = _bilinear_taps(grid.shape[1], out_w)
    fx = fx.astype(dtype)[None, :, None]
    return rows[:, j0] * (1 - fx) + rows[:, j1] * fx


def prepare_input(page: DocumentPage, vocab: Vocabulary, target_h: int = 336,
                  target_w: int = 256, stage1_scale: int = 2) -> np.ndarray:
    """Page -> (target_h, target_w, n_classes) float32 network input."""
    tokens = build_chargrid(page, vocab, stage1_scale * target_h, stage1_scale * target_w)
    return downsample_bilinear(one_hot(tokens, vocab.n_classes), target_h, target_w)
