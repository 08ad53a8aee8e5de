"""Non-conformity scores (APS, LAC, TOPK, RAPS) and the tail-aware penalties.

Lower scores mean a label conforms better. The scalar functions work on
one probability row; :func:`score_batch` is the vectorized driver used
by calibration and prediction.

Randomization enters only through per-sample uniforms: one ``u`` per
sample (shared by all candidate labels of that sample, so prediction sets
stay nested in the threshold) for the APS/TOPK/RAPS tie-breaking term,
and an independent ``u`` per sample for the randomized TACP penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BASE_SCORES = ("aps", "lac", "topk", "raps")
REGULARIZERS = ("none", "tacp", "stacp")

_U_STREAM = 0
_PENALTY_STREAM = 1


def _check_label(row, y):
    if not 0 <= y < len(row):
        raise IndexError(f"label {y} out of range for {len(row)} classes")


def rank(row, y: int) -> int:
    """Number of labels whose probability is >= that of ``y`` (1 = top)."""
    _check_label(row, y)
    py = row[y]
    return sum(1 for v in row if v >= py)


def score_lac(row, y: int) -> float:
    _check_label(row, y)
    return 1.0 - float(row[y])


def score_aps(row, y: int, u: float) -> float:
    """Mass of the ``rank(y) - 1`` most probable labels plus ``u * row[y]``."""
    o = rank(row, y)
    top = sorted((float(v) for v in row), reverse=True)
    return sum(top[: o - 1]) + u * float(row[y])


def score_topk(row, y: int, u: float) -> float:
    return rank(row, y) + u


def score_raps(row, y: int, u: float, raps_lambda: float, raps_k: int) -> float:
    return score_aps(row, y, u) + raps_lambda * max(rank(row, y) - raps_k, 0)


def score_tacp(base_score: float, rank: int, is_head: bool, lam: float, k_r: int,
               u_pen: float = 0.0) -> float:
    """``base + lam * [is_head] * (rank - k_r + u_pen)^+``."""
    if not is_head:
        return base_score
    return base_score + lam * max(rank - k_r + u_pen, 0.0)


def score_stacp(base_score: float, rank: int, prior_y: float, lam: float, k_r: int) -> float:
    """``base + lam * prior_y * (rank - k_r)^+``."""
    if not 0.0 <= prior_y <= 1.0:
        raise ValueError(f"class prior must lie in [0, 1], got {prior_y}")
    return base_score + lam * prior_y * max(rank - k_r, 0)


@dataclass(frozen=True)
class ScoreSpec:
    """Which score to compute and how to regularize it.

    ``raps_lambda``/``raps_k`` only matter for ``base="raps"``; ``lam``,
    ``k_r`` and ``randomized`` only for ``reg`` other than ``"none"``.
    ``tie_noise`` adds ``tie_noise * u`` to the base score, which makes
    otherwise continuous scores like LAC almost surely distinct across
    samples.
    """

    base: str = "aps"
    raps_lambda: float = 0.01
    raps_k: int = 5
    reg: str = "none"
    lam: float = 0.0
    k_r: int = 1
    randomized: bool = False
    seed: int = 0
    tie_noise: float = 0.0

    def __post_init__(self):
        if self.base not in BASE_SCORES:
            raise ConfigError(f"unknown base score {self.base!r}; expected one of {BASE_SCORES}")
        if self.reg not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.reg!r}; expected one of {REGULARIZERS}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.k_r < 1:
            raise ConfigError(f"k_r must be >= 1, got {self.k_r}")
        if self.raps_lambda < 0 or self.raps_k < 1:
            raise ConfigError("RAPS needs lambda >= 0 and k >= 1")
        if self.randomized and self.reg != "tacp":
            raise ConfigError("the randomized penalty is only defined for TACP")


def default_raps_constants(K: int) -> tuple[float, int]:
    """(lambda, k) for RAPS: k=8 at ImageNet scale (K >= 500), else k=5."""
    return (0.01, 8) if K >= 500 else (0.01, 5)


def sample_uniforms(seed: int, n: int, stream: int = _U_STREAM) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)])).random(n)


def rank_matrix(probs) -> np.ndarray:
    """Vectorized :func:`rank` for every (row, label) of an (N, K) matrix."""
    probs = np.asarray(probs, dtype=float)
    N, K = probs.shape
    order = np.argsort(-probs, axis=1, kind="stable")
    desc = np.take_along_axis(probs, order, axis=1)
    # a tie group's members all get the position of the group's last member
    is_end = np.ones((N, K), dtype=bool)
    is_end[:, :-1] = desc[:, :-1] != desc[:, 1:]
    pos = np.where(is_end, np.arange(K), K)
    ends = np.minimum.accumulate(pos[:, ::-1], axis=1)[:, ::-1]
    ranks = np.empty((N, K), dtype=np.int64)
    np.put_along_axis(ranks, order, ends + 1, axis=1)
    return ranks


def base_score_matrix(probs, base: str, u, ranks=None, raps_lambda: float = 0.01,
                      raps_k: int = 5) -> np.ndarray:
    """(N, K) base scores; ``u`` has one entry per row."""
    probs = np.asarray(probs, dtype=float)
    u = np.asarray(u, dtype=float)[:, None]
    if base == "lac":
        return 1.0 - probs
    if ranks is None:
        ranks = rank_matrix(probs)
    if base == "topk":
        return ranks + u
    desc = -np.sort(-probs, axis=1)
    above = np.zeros_like(desc)
    np.cumsum(desc[:, :-1], axis=1, out=above[:, 1:])
    aps = np.take_along_axis(above, ranks - 1, axis=1) + u * probs
    if base == "aps":
        return aps
    if base == "raps":
        return aps + raps_lambda * np.maximum(ranks - raps_k, 0)
    raise ConfigError(f"unknown base score {base!r}")


def regularize(base_scores, ranks, weights, lam: float, k_r: int, u_pen=None) -> np.ndarray:
    """Add ``lam * weight[y] * (rank - k_r + u_pen)^+`` to every entry.

    ``weights`` is the head indicator (TACP) or the class prior (sTACP),
    one entry per label. Entries with ``lam == 0`` are returned untouched.
    """
    base_scores = np.asarray(base_scores, dtype=float)
    if lam == 0:
        return base_scores.copy()
    excess = np.asarray(ranks, dtype=float) - k_r
    if u_pen is not None:
        excess = excess + np.asarray(u_pen, dtype=float)[:, None]
    w = np.asarray(weights, dtype=float)[None, :]
    return base_scores + lam * w * np.maximum(excess, 0.0)


def penalty_weights(spec: ScoreSpec, K: int, partition=None, prior=None):
    if spec.reg == "tacp":
        if partition is None:
            raise ConfigError("TACP scores need a head/tail partition")
        if partition.K != K:
            raise ConfigError(f"partition covers {partition.K} classes, probabilities have {K}")
        return partition.head_mask.astype(float)
    if spec.reg == "stacp":
        if prior is None:
            raise ConfigError("sTACP scores need a class prior")
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (K,):
            raise ConfigError(f"prior has shape {prior.shape}, expected ({K},)")
        if np.any(prior < 0) or np.any(prior > 1):
            raise ValueError("class prior entries must lie in [0, 1]")
        return prior
    return None


@dataclass
class ScoreTable:
    """Full (N, K) score matrix together with the ranks it was built from."""

    scores: np.ndarray
    ranks: np.ndarray

    def at(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        return self.scores[np.arange(labels.shape[0]), labels]

    def ranks_at(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        return self.ranks[np.arange(labels.shape[0]), labels]


def score_table(spec: ScoreSpec, probs, partition=None, prior=None, seed=None) -> ScoreTable:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError(f"probs must be 2-D, got shape {probs.shape}")
    N, K = probs.shape
    seed = spec.seed if seed is None else seed
    weights = penalty_weights(spec, K, partition, prior)
    ranks = rank_matrix(probs)
    u = sample_uniforms(seed, N)
    scores = base_score_matrix(probs, spec.base, u, ranks, spec.raps_lambda, spec.raps_k)
    if spec.tie_noise:
        scores = scores + spec.tie_noise * u[:, None]
    if weights is not None:
        u_pen = sample_uniforms(seed, N, _PENALTY_STREAM) if spec.randomized else None
        scores = regularize(scores, ranks, weights, spec.lam, spec.k_r, u_pen)
    return ScoreTable(scores, ranks)


def score_batch(spec: ScoreSpec, probs, labels=None, partition=None, prior=None,
                seed=None) -> np.ndarray:
    """Scores for the true labels (``labels`` given) or for all labels.

    With ``labels`` the result has shape (N,); otherwise (N, K). ``seed``
    overrides ``spec.seed`` so calibration and test batches can draw
    independent uniforms from one spec.
    """
    table = score_table(spec, probs, partition, prior, seed)
    if labels is None:
        return table.scores
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (table.scores.shape[0],):
        raise ValueError("labels and probs disagree on the number of samples")
    return table.at(labels)
