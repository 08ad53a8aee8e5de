"""Class priors and the head/tail split of the label space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# cumulative-mass comparisons absorb float error from normalized priors
_MASS_TOL = 1e-12


def estimate_prior(labels, K: int, smoothing: float = 0.0) -> np.ndarray:
    """Additively smoothed class frequencies ``(count_k + s) / (n + K s)``."""
    if K <= 0:
        raise ValueError(f"K must be positive, got {K}")
    if smoothing < 0:
        raise ValueError(f"smoothing must be >= 0, got {smoothing}")
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=K).astype(float)[:K]
    denom = labels.shape[0] + K * smoothing
    if denom <= 0:
        raise ValueError("cannot estimate a prior from zero samples without smoothing")
    p = (counts + smoothing) / denom
    return p / p.sum()


@dataclass(frozen=True)
class HeadTailPartition:
    head_mask: np.ndarray
    eta: float

    @property
    def K(self) -> int:
        return int(self.head_mask.shape[0])

    @property
    def head(self) -> np.ndarray:
        return np.flatnonzero(self.head_mask)

    @property
    def tail(self) -> np.ndarray:
        return np.flatnonzero(~self.head_mask)

    def is_head(self, labels) -> np.ndarray:
        return self.head_mask[np.asarray(labels, dtype=np.int64)]


def head_tail_partition(prior, eta: float) -> HeadTailPartition:
    """Smallest label set whose prior mass reaches ``eta``.

    Classes are taken greedily in descending prior order (equal priors:
    lower class index first) until the cumulative mass is at least ``eta``.
    Taking the largest priors first makes the greedy set a minimum-size
    solution.
    """
    p = np.asarray(prior, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("prior must be a non-empty 1-D array")
    if np.any(p < 0):
        raise ValueError("prior entries must be nonnegative")
    if not 0 < eta <= 1:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    reached = np.flatnonzero(cum >= eta - _MASS_TOL)
    size = int(reached[0]) + 1 if reached.size else p.size
    mask = np.zeros(p.size, dtype=bool)
    mask[order[:size]] = True
    return HeadTailPartition(mask, float(eta))
