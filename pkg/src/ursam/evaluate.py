"""Dice evaluation records and report writers.

Reports are deterministic byte-for-byte: records are sorted, floats are
formatted with a fixed precision, and no timestamps or environment
details are embedded.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "METHODS",
    "dsc",
    "EvalRecord",
    "evaluate_case",
    "report_csv_bytes",
    "write_report",
    "write_summary_json",
]

# Closed method vocabulary for report rows.
METHODS = ("auto", "ensemble", "fpc", "fnc", "fpnc", "ur", "manual")

_CSV_COLUMNS = (
    "case",
    "organ",
    "method",
    "dsc",
    "n",
    "ratio",
    "alpha_h",
    "threshold_mode",
    "lower_bound",
)


def dsc(gt, seg) -> float:
    """Dice similarity 2|G∩S| / (|G|+|S|).

    Two empty masks agree perfectly (1.0); an empty mask against a
    non-empty one scores 0.0.
    """
    g = np.asarray(getattr(gt, "data", gt)).astype(bool)
    s = np.asarray(getattr(seg, "data", seg)).astype(bool)
    if g.shape != s.shape:
        raise ValueError(f"mask shape mismatch: {g.shape} vs {s.shape}")
    ng = int(np.count_nonzero(g))
    ns = int(np.count_nonzero(s))
    if ng == 0 and ns == 0:
        return 1.0
    inter = int(np.count_nonzero(g & s))
    return 2.0 * inter / (ng + ns)


@dataclass(frozen=True)
class EvalRecord:
    case: str
    organ: str
    method: str
    dsc: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (0.0 <= self.dsc <= 1.0):
            raise ValueError(f"dsc out of range: {self.dsc}")


def evaluate_case(gt, candidates, case: str = "", organ: str = "", params=None):
    """Score every candidate mask against the ground truth.

    ``candidates`` maps method name to mask; the result is a list of
    :class:`EvalRecord` sorted by method name.
    """
    params = dict(params or {})
    records = []
    for method in sorted(candidates):
        records.append(
            EvalRecord(case, organ, method, dsc(gt, candidates[method]), params)
        )
    return records


def _sorted(records):
    return sorted(records, key=lambda r: (r.case, r.organ, r.method))


def _row(rec: EvalRecord) -> list[str]:
    p = rec.params
    return [
        rec.case,
        rec.organ,
        rec.method,
        f"{rec.dsc:.6f}",
        str(p.get("n", "")),
        _num(p.get("ratio", "")),
        _num(p.get("alpha_h", "")),
        str(p.get("threshold_mode", "")),
        str(p.get("lower_bound", "")),
    ]


def _num(v) -> str:
    if v == "":
        return ""
    return f"{float(v):g}"


def report_csv_bytes(records) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for rec in _sorted(records):
        writer.writerow(_row(rec))
    return buf.getvalue().encode("utf-8")


def _report_markdown(records) -> bytes:
    lines = ["| " + " | ".join(_CSV_COLUMNS) + " |"]
    lines.append("|" + "|".join(" --- " for _ in _CSV_COLUMNS) + "|")
    for rec in _sorted(records):
        lines.append("| " + " | ".join(_row(rec)) + " |")
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_report(records, path, fmt: str = "csv") -> None:
    """Write the per-(case, organ, method) report as CSV or Markdown."""
    if fmt == "csv":
        payload = report_csv_bytes(records)
    elif fmt in ("md", "markdown"):
        payload = _report_markdown(records)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "wb") as f:
        f.write(payload)


def write_summary_json(records, path) -> None:
    """Per-method mean DSC summary, deterministic key order."""
    records = list(records)
    by_method: dict[str, list[float]] = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec.dsc)
    summary = {
        "records": len(records),
        "mean_dsc": {
            m: round(float(np.mean(v)), 6) for m, v in sorted(by_method.items())
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
