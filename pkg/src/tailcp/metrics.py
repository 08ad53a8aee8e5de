"""Evaluation metrics for prediction sets.

Prediction sets are boolean (N, K) masks; :func:`as_set_mask` converts
sequences of label collections. Coverage/size helpers return fractions,
the head/tail and class-gap metrics return percentages like the reported
tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def as_set_mask(sets, K: int | None = None) -> np.ndarray:
    if isinstance(sets, np.ndarray) and sets.dtype == bool and sets.ndim == 2:
        return sets
    sets = [set(int(y) for y in s) for s in sets]
    if K is None:
        K = 1 + max((max(s) for s in sets if s), default=-1)
    mask = np.zeros((len(sets), K), dtype=bool)
    for i, s in enumerate(sets):
        mask[i, list(s)] = True
    return mask


def _hits(sets, labels):
    labels = np.asarray(labels, dtype=np.int64)
    K = max(int(labels.max()) + 1 if labels.size else 0, 0)
    if not isinstance(sets, np.ndarray):
        sets = as_set_mask(sets, None)
        if sets.shape[1] < K:
            sets = np.pad(sets, ((0, 0), (0, K - sets.shape[1])))
    if sets.shape[0] != labels.shape[0]:
        raise ValueError(f"{sets.shape[0]} prediction sets for {labels.shape[0]} labels")
    return sets, sets[np.arange(labels.shape[0]), labels]


def _pct(count, total) -> float:
    # integer numerator keeps this a single correctly rounded division
    return 100.0 * int(count) / int(total) if total else math.nan


def coverage_and_size(sets, labels) -> tuple[float, float]:
    """Fraction of samples whose set holds the true label, and mean set size."""
    sets, hits = _hits(sets, labels)
    if hits.size == 0:
        return math.nan, math.nan
    return float(hits.mean()), float(sets.sum(axis=1).mean())


def head_tail_metrics(sets, labels, partition) -> tuple[float, float, float]:
    """(Cov-head, Cov-tail, CovGap-HT) in percent; NaN for an absent group."""
    sets, hits = _hits(sets, labels)
    is_head = partition.is_head(labels)
    cov_head = _pct(hits[is_head].sum(), is_head.sum())
    cov_tail = _pct(hits[~is_head].sum(), (~is_head).sum())
    return float(cov_head), float(cov_tail), float(abs(cov_head - cov_tail))


def per_class_coverage(sets, labels, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class hit rate (NaN for classes without test samples) and counts."""
    sets, hits = _hits(sets, labels)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=K)[:K]
    covered = np.bincount(labels, weights=hits.astype(float), minlength=K)[:K]
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = np.where(counts > 0, covered / np.maximum(counts, 1), np.nan)
    return cov, counts


def class_covgap(sets, labels, K: int, alpha: float, include_empty: bool = False) -> float:
    """Mean |per-class coverage - (1 - alpha)|, in percent.

    Classes without test samples are skipped by default; with
    ``include_empty=True`` they count as zero coverage and the mean runs
    over all ``K`` classes.
    """
    cov, counts = per_class_coverage(sets, labels, K)
    if include_empty:
        cov = np.where(counts > 0, cov, 0.0)
    else:
        cov = cov[counts > 0]
    if cov.size == 0:
        return math.nan
    return float(100.0 * np.mean(np.abs(cov - (1.0 - alpha))))


@dataclass
class MetricsReport:
    coverage: float
    avg_size: float
    cov_head: float
    cov_tail: float
    covgap_ht: float
    covgap: float
    per_class_coverage: np.ndarray = field(repr=False)
    per_class_count: np.ndarray = field(repr=False)

    @property
    def empty_classes(self) -> int:
        return int((self.per_class_count == 0).sum())


def evaluate(sets, labels, K: int, alpha: float, partition=None,
             include_empty: bool = False) -> MetricsReport:
    """All metrics at once; percentages throughout, avg_size in labels."""
    sets = as_set_mask(sets, K)
    sets, hits = _hits(sets, labels)
    _, size = coverage_and_size(sets, labels)
    if partition is not None:
        cov_h, cov_t, gap_ht = head_tail_metrics(sets, labels, partition)
    else:
        cov_h = cov_t = gap_ht = math.nan
    per_cls, counts = per_class_coverage(sets, labels, K)
    return MetricsReport(
        coverage=_pct(hits.sum(), hits.size),
        avg_size=size,
        cov_head=cov_h,
        cov_tail=cov_t,
        covgap_ht=gap_ht,
        covgap=class_covgap(sets, labels, K, alpha, include_empty),
        per_class_coverage=100.0 * per_cls,
        per_class_count=counts,
    )
