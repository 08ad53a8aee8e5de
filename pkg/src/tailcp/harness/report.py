"""Per-trial records and their CSV / JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("method", "score", "alpha", "eta", "seed", "coverage", "avg_size", "cov_head",
               "cov_tail", "covgap_ht", "covgap", "lambda", "k_r")
METRIC_COLUMNS = ("coverage", "avg_size", "cov_head", "cov_tail", "covgap_ht", "covgap")


@dataclass(frozen=True)
class TrialRecord:
    method: str
    score: str
    alpha: float
    eta: float
    seed: int
    coverage: float
    avg_size: float
    cov_head: float
    cov_tail: float
    covgap_ht: float
    covgap: float
    lam: float | None = None
    k_r: int | None = None

    @property
    def cell(self) -> tuple[str, str, float, float]:
        return (self.method, self.score, self.alpha, self.eta)

    def same_as(self, other: TrialRecord) -> bool:
        """Field-wise equality that treats NaN as equal to NaN."""
        for a, b in zip(asdict(self).values(), asdict(other).values()):
            if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
                continue
            if a != b:
                return False
        return True


@dataclass(frozen=True)
class CellFailure:
    method: str
    score: str
    alpha: float
    eta: float
    seed: int
    error: str


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.method, r.score, _fmt(r.alpha), _fmt(r.eta), r.seed]
                   + [_fmt(getattr(r, c)) for c in METRIC_COLUMNS]
                   + [_fmt(r.lam), _fmt(r.k_r)])
    return buf.getvalue()


def parse_records_csv(text: str) -> list[TrialRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"expected header {','.join(CSV_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        d = dict(zip(CSV_COLUMNS, row))
        out.append(TrialRecord(
            method=d["method"], score=d["score"], alpha=float(d["alpha"]), eta=float(d["eta"]),
            seed=int(d["seed"]),
            **{c: float(d[c]) for c in METRIC_COLUMNS},
            lam=float(d["lambda"]) if d["lambda"] else None,
            k_r=int(d["k_r"]) if d["k_r"] else None,
        ))
    return out


def read_records(path) -> list[TrialRecord]:
    return parse_records_csv(Path(path).read_text(encoding="utf-8"))


def summarize(records) -> list[dict]:
    """Mean and sample standard deviation of every metric per config cell."""
    cells: dict[tuple, list[TrialRecord]] = {}
    for r in records:
        cells.setdefault(r.cell, []).append(r)
    out = []
    for (method, score, alpha, eta), rs in cells.items():
        entry = {"method": method, "score": score, "alpha": alpha, "eta": eta,
                 "trials": len(rs), "mean": {}, "std": {}}
        for c in METRIC_COLUMNS + ("lam", "k_r"):
            vals = np.array([getattr(r, c) for r in rs if getattr(r, c) is not None], dtype=float)
            if vals.size == 0:
                continue
            entry["mean"][c] = float(np.mean(vals))
            entry["std"][c] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        out.append(entry)
    return out


def _json_safe(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def records_to_json(records, failures=()) -> str:
    payload = {
        "records": [asdict(r) for r in records],
        "summary": summarize(records),
        "failures": [asdict(f) for f in failures],
    }
    return json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n"


def write_report(path, records, fmt: str = "csv", failures=()) -> None:
    text = records_to_csv(records) if fmt == "csv" else records_to_json(records, failures)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    metrics = METRIC_COLUMNS + ("lam", "k_r")
    w.writerow(["method", "score", "alpha", "eta", "trials"]
               + [f"{m}_{s}" for m in metrics for s in ("mean", "std")])
    for e in summary:
        w.writerow([e["method"], e["score"], _fmt(e["alpha"]), _fmt(e["eta"]), e["trials"]]
                   + [_fmt(e[s].get(m)) for m in metrics for s in ("mean", "std")])
    return buf.getvalue()
