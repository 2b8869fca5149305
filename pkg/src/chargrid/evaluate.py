"""Instance-level edit accuracy per field, pooled over a document set.

For each field the predicted and true instance strings of a document are
matched; exact matches cost nothing, any other pairing is one modification,
unmatched truths are insertions and unmatched predictions deletions. The
counts are summed over documents and the measure is
``1 - (insertions + deletions + modifications) / N`` with ``N`` the number of
true instances. It is negative when fixing the output takes more edits than
there are true instances.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .extract import ExtractionResult

# (field key, table label); order follows the usual results-table layout
FIELDS = (
    ("invoice_number", "Invoice Number"),
    ("invoice_amount", "Invoice Amount"),
    ("invoice_date", "Invoice Date"),
    ("vendor_name", "Vendor Name"),
    ("vendor_address", "Vendor Address"),
    ("lineitem_description", "Line-item Description"),
    ("lineitem_quantity", "Line-item Quantity"),
    ("lineitem_amount", "Line-item Amount"),
)
FIELD_KEYS = tuple(k for k, _ in FIELDS)
HEADER_FIELDS = FIELD_KEYS[:5]
LINEITEM_FIELDS = FIELD_KEYS[5:]


def normalize(s: str) -> str:
    return " ".join(s.split())


def field_instances(result: ExtractionResult, key: str) -> list[str]:
    """Normalized, non-empty instance strings of one field."""
    if key.startswith("lineitem_"):
        sub = key[len("lineitem_"):]
        raw = [li.get(sub, "") for li in result.line_items]
    else:
        raw = [result.header[key]] if key in result.header else []
    return [s for s in map(normalize, raw) if s]


def match_instances(predicted: list[str], truth: list[str]) -> tuple[int, int, int]:
    """(insertions, deletions, modifications) to turn ``predicted`` into ``truth``."""
    exact = sum((Counter(predicted) & Counter(truth)).values())
    rest_p = len(predicted) - exact
    rest_t = len(truth) - exact
    mod = min(rest_p, rest_t)
    return rest_t - mod, rest_p - mod, mod


@dataclass
class FieldScore:
    n: int = 0
    insertions: int = 0
    deletions: int = 0
    modifications: int = 0

    @property
    def measure(self) -> float | None:
        if self.n == 0:
            return None
        return 1.0 - (self.insertions + self.deletions + self.modifications) / self.n

    def to_dict(self) -> dict:
        return {"N": self.n, "insertions": self.insertions, "deletions": self.deletions,
                "modifications": self.modifications, "measure": self.measure}


@dataclass
class EvalReport:
    fields: dict[str, FieldScore] = field(default_factory=dict)
    n_documents: int = 0

    def measure(self, key: str) -> float | None:
        return self.fields[key].measure

    def to_dict(self) -> dict:
        return {"n_documents": self.n_documents,
                "fields": {k: v.to_dict() for k, v in self.fields.items()}}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, model_name: str = "chargrid-net") -> str:
        labels = dict(FIELDS)
        keys = [k for k in FIELD_KEYS if k in self.fields]
        header = ["Model/Field"] + [labels[k] for k in keys]
        row = [model_name]
        for k in keys:
            m = self.fields[k].measure
            row.append("undefined" if m is None else f"{100 * m:.2f}%")
        widths = [max(len(a), len(b)) for a, b in zip(header, row)]
        fmt = " | ".join(f"{{:<{w}}}" for w in widths)
        sep = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt.format(*header), sep, fmt.format(*row)])


def evaluate(pairs, fields=FIELD_KEYS) -> EvalReport:
    """Pool edit counts over (prediction, truth) pairs of ExtractionResults."""
    report = EvalReport({k: FieldScore() for k in fields})
    for pred, truth in pairs:
        report.n_documents += 1
        for k in fields:
            p, t = field_instances(pred, k), field_instances(truth, k)
            ins, dele, mod = match_instances(p, t)
            s = report.fields[k]
            s.n += len(t)
            s.insertions += ins
            s.deletions += dele
            s.modifications += mod
    return report


def pair_documents(predictions: dict, truths: dict) -> list[tuple]:
    if set(predictions) != set(truths):
        missing = sorted(set(truths) - set(predictions))
        extra = sorted(set(predictions) - set(truths))
        raise ValueError(f"document sets differ: missing predictions {missing[:5]}, "
                         f"unexpected predictions {extra[:5]}")
    return [(predictions[k], truths[k]) for k in sorted(truths)]


def load_results(directory) -> dict[str, ExtractionResult]:
    """Result files of a directory keyed by file stem; run manifests are skipped."""
    return {p.stem: ExtractionResult.loads(p.read_text(encoding="utf-8"))
            for p in sorted(Path(directory).glob("*.json")) if not p.name.endswith("manifest.json")}


def evaluate_dirs(pred_dir, truth_dir, fields=FIELD_KEYS) -> EvalReport:
    return evaluate(pair_documents(load_results(pred_dir), load_results(truth_dir)), fields)
