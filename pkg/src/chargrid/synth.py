"""Synthetic invoice pages with exact field annotations.

Pages are laid out on a character grid: a two-column header (vendor block,
invoice number, date, amount and distractor lines with language-specific
labels), a line-item table whose rows may span several description lines,
and a footer. Every page records its ground-truth field strings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .extract import ExtractionResult
from .ingest import CharBox, DocumentPage, FieldAnnotation, FieldClass, write_page


class TemplateError(ValueError):
    """The layout does not fit on the page."""


@dataclass
class SynthConfig:
    seed: int = 0
    n_pages: int = 10
    page_w: int = 768
    page_h: int = 1024
    margin: int = 32
    char_w: tuple[int, int] = (8, 9)
    char_h: tuple[int, int] = (14, 16)
    line_gap: tuple[int, int] = (4, 7)
    items: tuple[int, int] = (0, 8)
    desc_rows: tuple[int, int] = (1, 3)
    item_gap: tuple[int, int] = (1, 1)
    languages: tuple[str, ...] = ("en", "de", "fr")
    footer_amount_p: float = 0.4
    distractors: tuple[int, int] = (1, 3)

    def __post_init__(self):
        for name in ("char_w", "char_h", "line_gap", "items", "desc_rows", "item_gap", "distractors"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name}: invalid range {(lo, hi)}")
            setattr(self, name, (int(lo), int(hi)))
        if self.n_pages < 1:
            raise ValueError("n_pages must be >= 1")
        unknown = set(self.languages) - set(LABELS)
        if unknown:
            raise ValueError(f"unknown languages {sorted(unknown)}")
        self.languages = tuple(self.languages)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


LABELS = {
    "en": {
        "number": ["Invoice No:", "Invoice #", "Invoice Number:", "Inv. No."],
        "date": ["Date:", "Invoice Date:", "Issued:"],
        "amount": ["Total:", "Amount Due:", "Total Amount:", "Balance Due:"],
        "table": ("Description", "Qty", "Amount"),
        "distract": ["Customer No:", "Phone:", "Order No:", "VAT ID:", "Due Date:"],
        "footer": ["Thank you for your business", "Payment within 30 days", "Page 1 of 1"],
    },
    "de": {
        "number": ["Rechnungsnr.:", "Rechnung Nr:", "Rechnungsnummer:"],
        "date": ["Datum:", "Rechnungsdatum:"],
        "amount": ["Gesamt:", "Summe:", "Gesamtbetrag:"],
        "table": ("Beschreibung", "Menge", "Betrag"),
        "distract": ["Kundennr.:", "Tel.:", "Auftrag:", "USt-IdNr.:", "Lieferdatum:"],
        "footer": ["Vielen Dank", "Zahlbar innerhalb 14 Tagen", "Seite 1 von 1"],
    },
    "fr": {
        "number": ["Facture No:", "N° Facture:", "Facture:"],
        "date": ["Date:", "Date de facture:"],
        "amount": ["Total:", "Montant:", "Total TTC:"],
        "table": ("Désignation", "Qté", "Montant"),
        "distract": ["Client No:", "Tél:", "Commande:", "TVA:", "Échéance:"],
        "footer": ["Merci de votre confiance", "Page 1 sur 1"],
    },
}

COMPANY_A = ["Acme", "Nordic", "Blue River", "Sunrise", "Atlas", "Vertex", "Kestrel", "Alpine",
             "Orion", "Granite", "Harbor", "Maple", "Polar", "Summit", "Lumen", "Cobalt"]
COMPANY_B = ["Trading", "Supplies", "Logistics", "Services", "Foods", "Systems", "Tools",
             "Print", "Office", "Media", "Parts", "Energy"]
COMPANY_C = ["GmbH", "Ltd", "Inc", "SARL", "AS", "AB", "LLC", "AG", "SA"]
STREETS = ["Main Street", "Hauptstrasse", "Rue de la Paix", "Oak Avenue", "Storgata",
           "Bahnhofstr.", "Market Road", "Kirchweg", "Avenue Foch", "High Street"]
CITIES = ["Berlin", "Paris", "Oslo", "London", "Madrid", "Springfield", "Hamburg", "Lyon",
          "Bergen", "Munich", "Leeds", "Nantes"]
COUNTRIES = ["Germany", "France", "Norway", "United Kingdom", "Spain"]
PRODUCTS = ["Widget", "Cable", "Paper", "Toner", "Chair", "Desk", "Lamp", "Service", "Consulting",
            "Hours", "Licence", "Screws", "Box", "Steel", "Blue", "Large", "Small", "Premium",
            "Monthly", "Support", "Delivery", "Kit", "Adapter", "Filter", "Pallet", "Setup"]
MONTHS = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _between(rng, lo_hi):
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def format_amount(value: float, lang: str) -> str:
    s = f"{value:,.2f}"
    if lang == "de":
        return s.replace(",", "_").replace(".", ",").replace("_", ".")
    if lang == "fr":
        return s.replace(",", "").replace(".", ",")
    return s


def _invoice_number(rng) -> str:
    y = _between(rng, (2015, 2024))
    n = _between(rng, (1, 99999))
    style = _between(rng, (0, 3))
    return [f"INV-{y}-{n:04d}", f"{n:06d}", f"RE/{y}/{n}", f"F{y}-{n}"][style]


def _date(rng, lang) -> str:
    y, m, d = _between(rng, (2015, 2024)), _between(rng, (1, 12)), _between(rng, (1, 28))
    style = _between(rng, (0, 3))
    if style == 0:
        return f"{y}-{m:02d}-{d:02d}"
    if style == 1:
        return f"{d:02d}.{m:02d}.{y}"
    if style == 2:
        return f"{m:02d}/{d:02d}/{y}" if lang == "en" else f"{d:02d}/{m:02d}/{y}"
    return f"{d} {MONTHS[m - 1]} {y}"


def _distractor_value(rng) -> str:
    style = _between(rng, (0, 2))
    if style == 0:
        return f"{_between(rng, (1000, 99999))}"
    if style == 1:
        return f"+{_between(rng, (30, 49))} {_between(rng, (100, 999))} {_between(rng, (1000, 9999))}"
    return f"DE{_between(rng, (100000000, 999999999))}"


class _Canvas:
    """Character-cell layout with overlap checking."""

    def __init__(self, cfg: SynthConfig, rng):
        self.cw = _between(rng, cfg.char_w)
        self.ch = _between(rng, cfg.char_h)
        self.pitch = self.ch + _between(rng, cfg.line_gap)
        self.margin = cfg.margin
        self.page_w, self.page_h = cfg.page_w, cfg.page_h
        self.n_cols = (cfg.page_w - 2 * cfg.margin) // self.cw
        self.n_lines = (cfg.page_h - 2 * cfg.margin - self.ch) // self.pitch + 1
        self.used: set[tuple[int, int]] = set()
        self.chars: list[CharBox] = []

    def text(self, line: int, col: int, s: str) -> list[CharBox]:
        if line < 0 or line >= self.n_lines or col < 0 or col + len(s) > self.n_cols:
            raise TemplateError(f"text {s!r} at line {line}, col {col} leaves the page")
        out = []
        for k, c in enumerate(s):
            if c == " ":
                continue
            if (line, col + k) in self.used:
                raise TemplateError(f"text {s!r} overlaps existing text")
            self.used.add((line, col + k))
            out.append(CharBox(c, self.margin + (col + k) * self.cw,
                               self.margin + line * self.pitch, self.cw, self.ch))
        self.chars.extend(out)
        return out


def _bbox(chars: list[CharBox]) -> tuple[int, int, int, int]:
    x0 = min(c.x for c in chars)
    y0 = min(c.y for c in chars)
    x1 = max(c.x + c.w for c in chars)
    y1 = max(c.y + c.h for c in chars)
    return x0, y0, x1 - x0, y1 - y0


class _Page:
    def __init__(self, cfg: SynthConfig, rng):
        self.cfg, self.rng = cfg, rng
        self.canvas = _Canvas(cfg, rng)
        self.annotations: list[FieldAnnotation] = []
        self.truth = ExtractionResult()

    def annotate(self, cls: FieldClass, chars: list[CharBox], instance_id: int = 0):
        self.annotations.append(FieldAnnotation(cls, *_bbox(chars), instance_id=instance_id))

    def labelled(self, line, col, label, value, cls, stacked):
        """Label and value, inline or value below; returns lines used."""
        cv = self.canvas
        cv.text(line, col, label)
        if stacked:
            chars = cv.text(line + 1, col, value)
        else:
            chars = cv.text(line, col + len(label) + 1, value)
        if cls is not None:
            self.annotate(cls, chars)
            self.truth.header[cls.key] = value
        return 2 if stacked else 1


def _header_blocks(page: _Page, lang: str, amount_text: str, amount_in_header: bool):
    rng, labels = page.rng, LABELS[lang]
    name = f"{_pick(rng, COMPANY_A)} {_pick(rng, COMPANY_B)} {_pick(rng, COMPANY_C)}"
    address = [f"{_between(rng, (1, 199))} {_pick(rng, STREETS)}",
               f"{_between(rng, (10000, 99999))} {_pick(rng, CITIES)}"]
    if rng.random() < 0.5:
        address.append(_pick(rng, COUNTRIES))

    def vendor(line, col):
        cv = page.canvas
        chars = cv.text(line, col, name)
        page.annotate(FieldClass.VENDOR_NAME, chars)
        page.truth.header["vendor_name"] = name
        addr_chars = []
        for k, row in enumerate(address):
            addr_chars += cv.text(line + 1 + k, col, row)
        page.annotate(FieldClass.VENDOR_ADDRESS, addr_chars)
        page.truth.header["vendor_address"] = "\n".join(address)
        return 1 + len(address)

    def field_block(label, value, cls):
        stacked = rng.random() < 0.3
        return lambda line, col: page.labelled(line, col, label, value, cls, stacked)

    blocks = [(vendor, 1 + len(address)),
              (field_block(_pick(rng, labels["number"]), _invoice_number(rng),
                           FieldClass.INVOICE_NUMBER), 2),
              (field_block(_pick(rng, labels["date"]), _date(rng, lang),
                           FieldClass.INVOICE_DATE), 2)]
    if amount_in_header:
        blocks.append((field_block(_pick(rng, labels["amount"]), amount_text,
                                   FieldClass.INVOICE_AMOUNT), 2))
    for _ in range(_between(rng, page.cfg.distractors)):
        blocks.append((field_block(_pick(rng, labels["distract"]), _distractor_value(rng), None), 2))
    return blocks


def _layout_header(page: _Page, blocks) -> int:
    rng, cv = page.rng, page.canvas
    half = cv.n_cols // 2
    starts = [0, half + _between(rng, (0, 3))]
    lines = [_between(rng, (0, 1)), _between(rng, (0, 2))]
    order = list(range(len(blocks)))
    rng.shuffle(order)
    for k in order:
        block, _ = blocks[k]
        c = int(rng.integers(2))
        lines[c] += block(lines[c], starts[c]) + _between(rng, (0, 1))
    return max(lines)


def _make_items(rng, cfg: SynthConfig, lang: str, n_items: int, desc_w: int) -> list[dict]:
    items = []
    for _ in range(n_items):
        rows = []
        for _ in range(_between(rng, cfg.desc_rows)):
            target = _between(rng, (8, desc_w))
            words = [_pick(rng, PRODUCTS)]
            while True:
                w = _pick(rng, PRODUCTS)
                if len(" ".join(words)) + 1 + len(w) > target:
                    break
                words.append(w)
            rows.append(" ".join(words))
        qty = _between(rng, (1, 20)) if rng.random() < 0.8 else _between(rng, (1, 40)) / 2
        amount = round(qty * _between(rng, (100, 50000)) / 100, 2)
        qty_text = f"{qty:g}" if lang == "en" else f"{qty:g}".replace(".", ",")
        items.append({"rows": rows, "quantity": qty_text, "value": amount,
                      "amount": format_amount(amount, lang)})
    return items


def _line_items(page: _Page, lang: str, start: int, items: list[dict], desc_w: int) -> int:
    rng, cv, cfg = page.rng, page.canvas, page.cfg
    if rng.random() < 0.3:
        qty_col, desc_col = 0, 7
        amt_col = desc_col + desc_w + _between(rng, (2, 6))
    else:
        desc_col = 0
        qty_col = desc_w + _between(rng, (2, 5))
        amt_col = qty_col + _between(rng, (7, 12))
    if amt_col + 12 > cv.n_cols:
        raise TemplateError("table wider than page")
    d_lbl, q_lbl, a_lbl = LABELS[lang]["table"]
    cv.text(start, desc_col, d_lbl)
    cv.text(start, qty_col, q_lbl)
    cv.text(start, amt_col, a_lbl)
    line = start + 1 + _between(rng, (0, 1))
    for item_id, item in enumerate(items, start=1):
        desc_chars = []
        for k, row in enumerate(item["rows"]):
            desc_chars += cv.text(line + k, desc_col, row)
        q_chars = cv.text(line, qty_col, item["quantity"])
        a_chars = cv.text(line, amt_col, item["amount"])
        page.annotate(FieldClass.LINEITEM_DESCRIPTION, desc_chars, item_id)
        page.annotate(FieldClass.LINEITEM_QUANTITY, q_chars, item_id)
        page.annotate(FieldClass.LINEITEM_AMOUNT, a_chars, item_id)
        page.truth.line_items.append({"description": "\n".join(item["rows"]),
                                      "quantity": item["quantity"], "amount": item["amount"]})
        line += len(item["rows"]) + _between(rng, cfg.item_gap)
    return line


def generate_page(cfg: SynthConfig, rng: np.random.Generator) -> tuple[DocumentPage, ExtractionResult]:
    page = _Page(cfg, rng)
    cv = page.canvas
    lang = _pick(rng, cfg.languages)
    desc_w = _between(rng, (18, 28))
    items = _make_items(rng, cfg, lang, _between(rng, cfg.items), desc_w)
    if items:
        total = sum(it["value"] for it in items)
    else:
        total = _between(rng, (100, 500000)) / 100
    amount_text = format_amount(total, lang)
    amount_in_header = rng.random() >= cfg.footer_amount_p

    blocks = _header_blocks(page, lang, amount_text, amount_in_header)
    header_end = _layout_header(page, blocks)
    line = _line_items(page, lang, header_end + _between(rng, (1, 2)), items, desc_w) + 1
    if not amount_in_header:
        lbl = _pick(rng, LABELS[lang]["amount"])
        col = cv.n_cols - len(lbl) - 1 - len(amount_text) - _between(rng, (0, 4))
        line += page.labelled(line, max(col, 0), lbl, amount_text, FieldClass.INVOICE_AMOUNT,
                              stacked=False)
    if rng.random() < 0.7 and line + 1 < cv.n_lines:
        cv.text(line + 1, 0, _pick(rng, LABELS[lang]["footer"]))
    doc = DocumentPage(cfg.page_w, cfg.page_h, list(cv.chars), page.annotations)
    return doc, page.truth


def generate(cfg: SynthConfig, max_attempts: int = 20) -> list[tuple[DocumentPage, ExtractionResult]]:
    """Deterministic list of (page, truth) pairs for ``cfg.seed``.

    A layout that does not fit is redrawn from the next random stream of the
    same page; after ``max_attempts`` failures :class:`TemplateError` is raised.
    """
    root = np.random.SeedSequence(cfg.seed)
    out = []
    for seq in root.spawn(cfg.n_pages):
        for attempt_seq in seq.spawn(max_attempts):
            try:
                out.append(generate_page(cfg, np.random.default_rng(attempt_seq)))
                break
            except TemplateError:
                continue
        else:
            raise TemplateError(f"no valid layout after {max_attempts} attempts; "
                                "check page size and item ranges")
    return out


def write_dataset(samples, out_dir, prefix: str = "page") -> list[Path]:
    """Write ``pages/<stem>.json`` and ``truth/<stem>.json`` per sample."""
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    paths = []
    for k, (page, truth) in enumerate(samples):
        stem = f"{prefix}_{k:04d}"
        write_page(page, out / "pages" / f"{stem}.json")
        (out / "truth" / f"{stem}.json").write_text(truth.dumps(), encoding="utf-8")
        paths.append(out / "pages" / f"{stem}.json")
    return paths
