"""Synthetic long-tail classifier outputs, prediction-file I/O and splits.

A "batch" here is a pair of aligned arrays: integer labels of shape (n,)
and a row-stochastic probability matrix of shape (n, K).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ProfileError, SplitError

ROW_SUM_TOL = 1e-3


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ClassProfile:
    """Per-class sample counts of a long-tail label distribution.

    Parameters
    ----------
    counts : tuple of int
        Number of samples ``n_k`` for each class ``k``; all must be >= 1.
    kind : {"exponential", "pareto", "explicit"}
        How the counts were produced.
    param : float, optional
        Imbalance factor ``mu`` (exponential) or power ``rho`` (pareto).
    """

    counts: tuple[int, ...]
    kind: str = "explicit"
    param: float | None = None

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) == 0:
            raise ProfileError("profile needs at least one class")
        if min(counts) < 1:
            raise ProfileError(f"all class counts must be >= 1, got {counts}")
        if self.kind not in ("exponential", "pareto", "explicit"):
            raise ProfileError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "counts", counts)

    @property
    def K(self) -> int:
        return len(self.counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def prior(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=float)
        return c / c.sum()

    @property
    def imbalance(self) -> float:
        return max(self.counts) / min(self.counts)


def exponential_profile(K: int, n_max: int, mu: float) -> ClassProfile:
    """CIFAR-LT style profile ``n_k = round(n_max * mu**(-k / (K - 1)))``."""
    if K < 2:
        raise ProfileError(f"K must be >= 2, got {K}")
    if n_max < 1:
        raise ProfileError(f"n_max must be >= 1, got {n_max}")
    if mu < 1:
        raise ProfileError(f"imbalance factor must be >= 1, got {mu}")
    if _round_half_up(n_max / mu) < 1:
        raise ProfileError(f"n_max={n_max} with mu={mu} leaves the last class empty")
    counts = [max(1, _round_half_up(n_max * mu ** (-k / (K - 1)))) for k in range(K)]
    return ClassProfile(tuple(counts), "exponential", float(mu))


def exponential_profile_for_total(K: int, n_total: int, mu: float) -> ClassProfile:
    """Smallest-``n_max`` exponential profile with at least ``n_total`` samples."""
    lo = max(1, int(math.ceil(mu / 2)))
    if exponential_profile(K, lo, mu).n >= n_total:
        return exponential_profile(K, lo, mu)
    hi = max(lo + 1, n_total)
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if exponential_profile(K, mid, mu).n >= n_total:
            hi = mid
        else:
            lo = mid
    return exponential_profile(K, hi, mu)


def pareto_profile(K: int, n_total: int, rho: float) -> ClassProfile:
    """Power-law profile ``p_k ∝ (k + 1)**(-rho)`` apportioned over ``n_total``.

    Uses largest-remainder apportionment; classes that would receive zero
    samples are topped up to one by taking from the largest class.
    """
    if K < 2:
        raise ProfileError(f"K must be >= 2, got {K}")
    if n_total < K:
        raise ProfileError(f"n_total={n_total} cannot give every one of {K} classes a sample")
    if rho < 0:
        raise ProfileError(f"rho must be >= 0, got {rho}")
    w = np.arange(1, K + 1, dtype=float) ** (-float(rho))
    quota = n_total * w / w.sum()
    counts = np.floor(quota).astype(int)
    remainder = quota - counts
    short = n_total - counts.sum()
    # stable sort keeps the lower class index first on equal remainders
    order = np.argsort(-remainder, kind="stable")
    counts[order[:short]] += 1
    while counts.min() < 1:
        counts[np.argmax(counts)] -= 1
        counts[np.argmin(counts)] += 1
    return ClassProfile(tuple(int(c) for c in counts), "pareto", float(rho))


@dataclass(frozen=True)
class SynthModelSpec:
    """Toy stand-in for a pretrained classifier.

    Each sample gets logits ``noise_sigma * N(0, 1)`` per class plus
    ``signal`` on its true class. The emitted posterior is
    ``softmax(logits / temperature + prior_weight * log(prior))``; with the
    default ``prior_weight=1`` a long-tail prior biases predictions toward
    head classes, as a model trained on long-tail data does. Set
    ``prior_weight=0`` for a prior-agnostic model.
    """

    signal: float = 2.0
    noise_sigma: float = 1.0
    temperature: float = 1.0
    prior_weight: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.signal < 0:
            raise ValueError(f"signal must be >= 0, got {self.signal}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True)
class PredictionBatch:
    """Aligned labels and class-probability rows."""

    labels: np.ndarray
    probs: np.ndarray
    K: int = field(default=-1)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError(f"probs must be 2-D, got shape {probs.shape}")
        if labels.shape != (probs.shape[0],):
            raise ValueError(f"{labels.shape[0]} labels for {probs.shape[0]} probability rows")
        K = probs.shape[1] if self.K < 0 else self.K
        if K != probs.shape[1]:
            raise ValueError(f"K={K} but probs has {probs.shape[1]} columns")
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise ValueError(f"labels must lie in [0, {K})")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "K", int(K))

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def __len__(self):
        return self.n

    def take(self, idx) -> PredictionBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return PredictionBatch(self.labels[idx], self.probs[idx], self.K)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def synth_generate(profile: ClassProfile, model: SynthModelSpec, seed: int) -> PredictionBatch:
    """Draw exactly ``profile.counts[k]`` samples of each class, shuffled."""
    rng = np.random.default_rng(seed)
    K = profile.K
    labels = np.repeat(np.arange(K), profile.counts)
    rng.shuffle(labels)
    n = labels.shape[0]
    logits = model.noise_sigma * rng.standard_normal((n, K))
    logits[np.arange(n), labels] += model.signal
    z = logits / model.temperature
    if model.prior_weight != 0 and K > 1:
        z = z + model.prior_weight * np.log(profile.prior)
    return PredictionBatch(labels, softmax(z, axis=1), K)


def load_predictions(path, fmt: str = "probs", header: bool = False) -> PredictionBatch:
    """Read a ``label, v_1, ..., v_K`` CSV file.

    ``fmt="logits"`` applies a row-wise softmax. ``fmt="probs"`` rejects
    negative entries and rows whose sum is off by more than 1e-3, then
    renormalizes every row.
    """
    if fmt not in ("probs", "logits"):
        raise ValueError(f"format must be 'probs' or 'logits', got {fmt!r}")
    labels, rows = [], []
    K = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError("expected a label and at least one value", lineno)
            if K is None:
                K = len(row) - 1
            elif len(row) - 1 != K:
                raise ParseError(f"expected {K} values, got {len(row) - 1}", lineno)
            try:
                label = int(row[0].strip())
            except ValueError:
                raise ParseError(f"non-integer label {row[0]!r}", lineno) from None
            try:
                values = [float(c) for c in row[1:]]
            except ValueError:
                raise ParseError("non-numeric value", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite value", lineno)
            if not 0 <= label < K:
                raise ParseError(f"label out of range: {label} not in [0, {K})", lineno)
            if fmt == "probs":
                if min(values) < 0:
                    raise ParseError("negative probability", lineno)
                total = sum(values)
                if abs(total - 1.0) > ROW_SUM_TOL:
                    raise ParseError(f"probabilities sum to {total:.6g}", lineno)
            labels.append(label)
            rows.append(values)
    if K is None:
        raise ParseError(f"{path}: no data rows")
    probs = np.asarray(rows, dtype=float)
    if fmt == "logits":
        probs = softmax(probs, axis=1)
    else:
        probs = probs / probs.sum(axis=1, keepdims=True)
    return PredictionBatch(np.asarray(labels), probs, K)


def write_predictions(dest, batch: PredictionBatch, header: bool = False) -> None:
    """Write ``batch`` as ``label, v_1, ..., v_K`` rows to a path or open file."""
    if hasattr(dest, "write"):
        _write_rows(dest, batch, header)
        return
    with Path(dest).open("w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, batch, header)


def _write_rows(fh, batch, header):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(["label"] + [f"p{k}" for k in range(batch.K)])
    for y, row in zip(batch.labels, batch.probs):
        w.writerow([int(y)] + [repr(float(v)) for v in row])


def split_indices(labels, frac_cal: float, seed: int, stratified: bool = False,
                  allow_empty: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Return sorted (first, second) index arrays partitioning ``labels``.

    Non-stratified: a random ``round(frac_cal * n)`` indices go first.
    Stratified: each class is shuffled on its own and ``round(frac_cal * n_k)``
    of it goes first; singleton classes always go first.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if not 0 < frac_cal < 1:
        raise SplitError(f"frac_cal must be in (0, 1), got {frac_cal}")
    if n < 2 and not allow_empty:
        raise SplitError(f"need at least 2 samples to split, got {n}")
    rng = np.random.default_rng(seed)
    if stratified:
        first = []
        for k in np.unique(labels):
            members = np.flatnonzero(labels == k)
            rng.shuffle(members)
            n_k = members.shape[0]
            take = n_k if n_k == 1 else _round_half_up(frac_cal * n_k)
            first.append(members[:take])
        first = np.concatenate(first) if first else np.empty(0, dtype=np.int64)
    else:
        perm = rng.permutation(n)
        first = perm[:_round_half_up(frac_cal * n)]
    mask = np.zeros(n, dtype=bool)
    mask[first] = True
    a, b = np.flatnonzero(mask), np.flatnonzero(~mask)
    if not allow_empty and (a.size == 0 or b.size == 0):
        raise SplitError(f"frac_cal={frac_cal} leaves an empty side ({a.size} / {b.size})")
    return a, b


def split(batch: PredictionBatch, frac_cal: float, seed: int,
          stratified: bool = False) -> tuple[PredictionBatch, PredictionBatch]:
    cal_idx, test_idx = split_indices(batch.labels, frac_cal, seed, stratified)
    return batch.take(cal_idx), batch.take(test_idx)
