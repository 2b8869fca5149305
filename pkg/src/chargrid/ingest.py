"""Page model plus parsers for OCR output and field annotations.

A page is a list of character boxes in page-pixel coordinates. Word-level
OCR output (Tesseract TSV) is split into per-character boxes by dividing
each word box uniformly along the horizontal axis.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed OCR or annotation input."""


class FieldClass(IntEnum):
    BACKGROUND = 0
    INVOICE_NUMBER = 1
    INVOICE_DATE = 2
    INVOICE_AMOUNT = 3
    VENDOR_NAME = 4
    VENDOR_ADDRESS = 5
    LINEITEM_DESCRIPTION = 6
    LINEITEM_QUANTITY = 7
    LINEITEM_AMOUNT = 8

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "FieldClass":
        try:
            return cls[key.upper()]
        except KeyError:
            raise ParseError(f"unknown field class {key!r}") from None

    @property
    def is_header(self) -> bool:
        return 1 <= self.value <= 5

    @property
    def is_lineitem(self) -> bool:
        return self.value >= 6


N_FIELD_CLASSES = len(FieldClass)
HEADER_CLASSES = tuple(c for c in FieldClass if c.is_header)
LINEITEM_CLASSES = tuple(c for c in FieldClass if c.is_lineitem)


@dataclass(frozen=True)
class CharBox:
    char: str
    x: int
    y: int
    w: int
    h: int

    @property
    def center(self) -> tuple[float, float]:
        """(x, y) center in page pixels."""
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass(frozen=True)
class FieldAnnotation:
    field_class: FieldClass
    x: int
    y: int
    w: int
    h: int
    instance_id: int = 0

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass
class DocumentPage:
    page_w: int
    page_h: int
    chars: list[CharBox] = field(default_factory=list)
    annotations: list[FieldAnnotation] = field(default_factory=list)

    def __post_init__(self):
        validate_page(self)

    def text(self) -> str:
        return "".join(c.char for c in self.chars)


def validate_page(page: DocumentPage) -> None:
    if page.page_w < 1 or page.page_h < 1:
        raise ValueError(f"page size must be positive, got {page.page_w}x{page.page_h}")
    for k, cb in enumerate(page.chars):
        if len(cb.char) != 1:
            raise ValueError(f"char {k}: expected a single character, got {cb.char!r}")
        if cb.w < 1 or cb.h < 1:
            raise ValueError(f"char {k} ({cb.char!r}): non-positive size {cb.w}x{cb.h}")
        if cb.x < 0 or cb.y < 0 or cb.x + cb.w > page.page_w or cb.y + cb.h > page.page_h:
            raise ValueError(f"char {k} ({cb.char!r}) outside page bounds")
    seen = set()
    for ann in page.annotations:
        if ann.w < 0 or ann.h < 0:
            raise ValueError(f"annotation {ann.field_class.key}: negative size")
        if ann.field_class.is_header:
            if ann.instance_id != 0:
                raise ValueError(f"header field {ann.field_class.key} must have instance_id 0")
            if ann.field_class in seen:
                raise ValueError(f"header field {ann.field_class.key} annotated twice")
            seen.add(ann.field_class)


def split_word_box(word: str, x: int, y: int, w: int, h: int) -> list[CharBox]:
    """Divide a word box into contiguous per-character boxes.

    Each character gets ``w // n`` pixels; the remainder goes one pixel at a
    time to the leftmost characters.
    """
    n = len(word)
    if n == 0:
        raise ValueError("cannot split an empty word")
    if w < n:
        raise ValueError(f"word {word!r} of {n} chars does not fit in width {w}")
    base, extra = divmod(w, n)
    boxes = []
    cx = x
    for k, ch in enumerate(word):
        cw = base + (1 if k < extra else 0)
        boxes.append(CharBox(ch, cx, y, cw, h))
        cx += cw
    return boxes


TSV_COLUMNS = ("level", "page_num", "block_num", "par_num", "line_num", "word_num",
               "left", "top", "width", "height", "conf", "text")


def parse_ocr_tsv(text: str, page_w: int | None = None, page_h: int | None = None) -> DocumentPage:
    """Parse Tesseract word-level TSV into a page of character boxes.

    Page size is taken from the level-1 (page) row when present; otherwise
    from the arguments, otherwise from the extent of the words.
    """
    lines = text.splitlines()
    chars: list[CharBox] = []
    size = None
    start = 0
    if lines and lines[0].split("\t")[0].strip() == "level":
        start = 1
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) == 11:
            # Tesseract drops the trailing empty text column on structural rows.
            cols.append("")
        if len(cols) != 12:
            raise ParseError(f"line {lineno}: expected 12 columns, got {len(cols)}")
        try:
            level = int(cols[0])
            left, top, width, height = (int(v) for v in cols[6:10])
            conf = float(cols[10])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if level == 1:
            size = (width, height)
            continue
        word = cols[11].strip()
        if level != 5 or conf < 0 or not word:
            continue
        if width < len(word):
            # too narrow for one pixel per character; widen to the minimum
            logger.warning("line %d: word %r wider than its box, widening", lineno, word)
            width = len(word)
        chars.extend(split_word_box(word, left, top, width, max(height, 1)))
    if page_w is None or page_h is None:
        if size is not None:
            page_w, page_h = size
        else:
            page_w = max((c.x + c.w for c in chars), default=1)
            page_h = max((c.y + c.h for c in chars), default=1)
    return DocumentPage(page_w, page_h, chars)


def _clip(x: int, y: int, w: int, h: int, page_w: int, page_h: int):
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, page_w), min(y + h, page_h)
    return x0, y0, max(x1 - x0, 0), max(y1 - y0, 0)


def parse_annotations(records: Iterable[dict], page_w: int, page_h: int) -> list[FieldAnnotation]:
    out = []
    for k, rec in enumerate(records):
        missing = [key for key in ("class", "x", "y", "w", "h") if key not in rec]
        if missing:
            raise ParseError(f"annotation {k}: missing keys {missing}")
        cls = FieldClass.from_key(rec["class"])
        x, y, w, h = (int(rec[key]) for key in ("x", "y", "w", "h"))
        if w < 0 or h < 0:
            raise ParseError(f"annotation {cls.key}: negative dimensions {w}x{h}")
        clipped = _clip(x, y, w, h, page_w, page_h)
        if clipped != (x, y, w, h):
            logger.warning("annotation %s clipped from %s to %s", cls.key, (x, y, w, h), clipped)
        out.append(FieldAnnotation(cls, *clipped, instance_id=int(rec.get("instance_id", 0))))
    return out


def load_annotations(text: str, page: DocumentPage) -> DocumentPage:
    """Attach annotations from canonical JSON (a page document or a bare list)."""
    data = json.loads(text)
    records = data["annotations"] if isinstance(data, dict) else data
    anns = parse_annotations(records, page.page_w, page.page_h)
    return DocumentPage(page.page_w, page.page_h, list(page.chars), anns)


def page_to_dict(page: DocumentPage) -> dict:
    return {
        "page_w": page.page_w,
        "page_h": page.page_h,
        "chars": [{"c": c.char, "x": c.x, "y": c.y, "w": c.w, "h": c.h} for c in page.chars],
        "annotations": [
            {"class": a.field_class.key, "x": a.x, "y": a.y, "w": a.w, "h": a.h,
             "instance_id": a.instance_id}
            for a in page.annotations
        ],
    }


def page_from_dict(data: dict) -> DocumentPage:
    page_w, page_h = int(data["page_w"]), int(data["page_h"])
    chars = [CharBox(c["c"], int(c["x"]), int(c["y"]), int(c["w"]), int(c["h"]))
             for c in data.get("chars", [])]
    anns = parse_annotations(data.get("annotations", []), page_w, page_h)
    return DocumentPage(page_w, page_h, chars, anns)


def dumps_page(page: DocumentPage) -> str:
    return json.dumps(page_to_dict(page), ensure_ascii=False)


def loads_page(text: str) -> DocumentPage:
    return page_from_dict(json.loads(text))


def read_page(path) -> DocumentPage:
    with open(path, encoding="utf-8") as fh:
        return loads_page(fh.read())


def write_page(page: DocumentPage, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_page(page))
