"""Conformal thresholds and prediction sets.

All quantiles are order statistics with the finite-sample correction: for
``n`` scores at level ``1 - alpha`` the threshold is the ``m``-th smallest
score with ``m = ceil((n + 1) (1 - alpha))``, and ``+inf`` when ``m > n``.

TACP and sTACP need no calibrator of their own: they are
:func:`calibrate_standard` applied to regularized scores.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import split_indices
from .errors import ConfigError, EmptyCalibrationWarning
from .scores import ScoreSpec, score_table

# (n + 1) * level is snapped to an integer when this close, so that decimal
# alphas like 0.3 are not pushed past an integer by binary rounding
_CEIL_TOL = 1e-9

QUANTILE_LEVELS = (0.5, 0.6, 0.7, 0.8, 0.9)
K_RULES = ("min_valid", "full")


def _order_index(n: int, level: float) -> int:
    x = (n + 1) * level
    r = round(x)
    if abs(x - r) <= _CEIL_TOL * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def quantile_at_level(scores, level: float) -> float:
    """``ceil((n + 1) * level)``-th smallest score, or ``+inf`` past ``n``."""
    scores = np.asarray(scores, dtype=float).ravel()
    n = scores.shape[0]
    if n == 0:
        warnings.warn("quantile of an empty score set; returning +inf",
                      EmptyCalibrationWarning, stacklevel=2)
        return math.inf
    m = _order_index(n, level)
    if m > n:
        return math.inf
    if m < 1:
        return -math.inf
    return float(np.partition(scores, m - 1)[m - 1])


def conformal_quantile(scores, alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return quantile_at_level(scores, 1.0 - alpha)


def _group_quantile(scores, alpha):
    # empty groups get +inf by definition, no warning needed
    if len(scores) == 0:
        return math.inf
    return conformal_quantile(scores, alpha)


@dataclass(frozen=True)
class ThresholdMap:
    """Calibrated thresholds and the rule resolving each class to one of them.

    ``values`` maps a group key to its threshold; ``assignment[y]`` is the
    key for class ``y`` (unused for ``kind="global"``, whose single key is
    ``"global"``). Thresholds may be ``+inf``.
    """

    kind: str
    values: dict
    assignment: tuple | None = None
    notes: tuple[str, ...] = ()

    def resolve(self, K: int) -> np.ndarray:
        if self.kind == "global":
            return np.full(K, self.values["global"], dtype=float)
        if self.assignment is None or len(self.assignment) != K:
            n = None if self.assignment is None else len(self.assignment)
            raise ConfigError(f"threshold map covers {n} classes, need {K}")
        return np.array([self.values[key] for key in self.assignment], dtype=float)

    @property
    def global_value(self) -> float:
        return self.values["global"]


def calibrate_standard(cal_scores, alpha: float) -> ThresholdMap:
    cal_scores = np.asarray(cal_scores, dtype=float)
    if cal_scores.size == 0:
        return ThresholdMap("global", {"global": math.inf}, notes=("empty calibration set",))
    return ThresholdMap("global", {"global": conformal_quantile(cal_scores, alpha)})


def calibrate_pw(cal_scores, cal_labels, partition, alpha: float) -> ThresholdMap:
    """Partition-Wise: one threshold from head-class samples, one from tail."""
    cal_scores = np.asarray(cal_scores, dtype=float)
    is_head = partition.is_head(cal_labels)
    values = {
        "head": _group_quantile(cal_scores[is_head], alpha),
        "tail": _group_quantile(cal_scores[~is_head], alpha),
    }
    notes = tuple(f"empty {g} group" for g, sel in (("head", is_head), ("tail", ~is_head))
                  if not sel.any())
    assignment = tuple("head" if h else "tail" for h in partition.head_mask)
    return ThresholdMap("per_group", values, assignment, notes)


def classwise_is_trivial(n_y: int, alpha: float) -> bool:
    """True when ``n_y < 1/alpha - 1``: too few samples for a finite threshold."""
    return n_y < 1.0 / alpha - 1.0 - _CEIL_TOL


def calibrate_classwise(cal_scores, cal_labels, K: int, alpha: float) -> ThresholdMap:
    cal_scores = np.asarray(cal_scores, dtype=float)
    cal_labels = np.asarray(cal_labels, dtype=np.int64)
    values = {}
    for y in range(K):
        s = cal_scores[cal_labels == y]
        values[y] = math.inf if classwise_is_trivial(s.size, alpha) else _group_quantile(s, alpha)
    return ThresholdMap("per_class", values, tuple(range(K)))


def default_n_min(alpha: float) -> int:
    """Smallest per-class clustering count that keeps a class out of the null set."""
    return max(1, int(math.ceil(1.0 / alpha - 1.0 - _CEIL_TOL)))


def cluster_split(cal_labels, gamma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified (clustering, threshold) index split of the calibration set."""
    return split_indices(cal_labels, gamma, seed, stratified=True, allow_empty=True)


def _kmeans(points, M, seed):
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=M, n_init=10, max_iter=100, random_state=int(seed) % 2**32)
    return km.fit_predict(points)


def calibrate_cluster(cal_scores, cal_labels, K: int, alpha: float, M: int = 4,
                      gamma: float = 0.8, seed: int = 0, n_min: int | None = None) -> ThresholdMap:
    """Clustered conformal calibration.

    A stratified ``gamma`` fraction of the calibration set is used to embed
    each class as the vector of its score quantiles at levels 0.5..0.9;
    classes with fewer than ``n_min`` clustering samples go to the null
    group. The rest are grouped by k-means into ``M`` clusters and each
    cluster is calibrated on the remaining samples of its classes. The null
    group uses all remaining samples.
    """
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    if not 0 < gamma < 1:
        raise ConfigError(f"gamma must be in (0, 1), got {gamma}")
    cal_scores = np.asarray(cal_scores, dtype=float)
    cal_labels = np.asarray(cal_labels, dtype=np.int64)
    n_min = default_n_min(alpha) if n_min is None else n_min
    clus_idx, thr_idx = cluster_split(cal_labels, gamma, seed)
    clus_scores, clus_labels = cal_scores[clus_idx], cal_labels[clus_idx]
    thr_scores, thr_labels = cal_scores[thr_idx], cal_labels[thr_idx]

    counts = np.bincount(clus_labels, minlength=K)[:K]
    kept = np.flatnonzero(counts >= n_min)
    notes = []
    assignment = ["null"] * K
    values = {"null": _group_quantile(thr_scores, alpha)}
    if kept.size:
        if M > kept.size:
            msg = f"M={M} exceeds the {kept.size} non-null classes; using M={kept.size}"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
            M = int(kept.size)
        emb = np.stack([np.quantile(clus_scores[clus_labels == y], QUANTILE_LEVELS) for y in kept])
        # infinite scores would break the Euclidean embedding
        emb = np.nan_to_num(emb, posinf=np.finfo(float).max / 4)
        ids = np.zeros(kept.size, dtype=int) if M == 1 else _kmeans(emb, M, seed)
        for y, c in zip(kept, ids):
            assignment[y] = int(c)
        for c in range(M):
            members = kept[ids == c]
            values[c] = _group_quantile(thr_scores[np.isin(thr_labels, members)], alpha)
    else:
        notes.append("all classes are null; CLUSTER reduces to STANDARD")
    return ThresholdMap("per_cluster", values, tuple(assignment), tuple(notes))


@dataclass(frozen=True)
class Rc3pState:
    """Rank-calibrated class-wise thresholds.

    ``err[y, k - 1]`` is the fraction of class-``y`` calibration samples
    whose true-label rank exceeds ``k``; ``k_hat[y]`` is the rank cut-off
    used at prediction time.
    """

    k_hat: np.ndarray
    err: np.ndarray
    thresholds: ThresholdMap
    counts: np.ndarray = field(default=None)


def topk_error_table(cal_ranks, cal_labels, K: int) -> tuple[np.ndarray, np.ndarray]:
    """(K, K) table of class-wise top-k error and the per-class sample counts."""
    cal_ranks = np.asarray(cal_ranks, dtype=np.int64)
    cal_labels = np.asarray(cal_labels, dtype=np.int64)
    counts = np.bincount(cal_labels, minlength=K)[:K]
    # hist[y, r - 1] = number of class-y samples whose true label has rank r
    hist = np.zeros((K, K), dtype=np.int64)
    np.add.at(hist, (cal_labels, cal_ranks - 1), 1)
    # samples with rank > k = total - (samples with rank <= k)
    within = np.cumsum(hist, axis=1)
    err = np.zeros((K, K), dtype=float)
    nz = counts > 0
    err[nz] = (counts[nz, None] - within[nz]) / counts[nz, None]
    return err, counts


def calibrate_rc3p(cal_scores, cal_ranks, cal_labels, K: int, alpha: float,
                   k_rule: str = "min_valid") -> Rc3pState:
    if k_rule not in K_RULES:
        raise ConfigError(f"unknown RC3P k rule {k_rule!r}; expected one of {K_RULES}")
    cal_scores = np.asarray(cal_scores, dtype=float)
    cal_labels = np.asarray(cal_labels, dtype=np.int64)
    err, counts = topk_error_table(cal_ranks, cal_labels, K)
    k_hat = np.full(K, K, dtype=np.int64)
    values = {}
    for y in range(K):
        if counts[y] == 0:
            values[y] = math.inf
            continue
        if k_rule == "min_valid":
            # err[y, K - 1] == 0 < alpha, so a valid k always exists
            k_hat[y] = int(np.flatnonzero(err[y] < alpha)[0]) + 1
        level = 1.0 - (alpha - err[y, k_hat[y] - 1])
        values[y] = quantile_at_level(cal_scores[cal_labels == y], level)
    return Rc3pState(k_hat, err, ThresholdMap("per_class", values, tuple(range(K))), counts)


def predict_from_scores(thresholds: ThresholdMap, scores, ranks=None,
                        rc3p: Rc3pState | None = None) -> np.ndarray:
    """Boolean (N, K) membership mask: ``score <= threshold`` per label."""
    scores = np.asarray(scores, dtype=float)
    K = scores.shape[1]
    tau = thresholds.resolve(K)
    sets = scores <= tau[None, :]
    if rc3p is not None:
        if ranks is None:
            raise ConfigError("RC3P prediction needs label ranks")
        if rc3p.k_hat.shape != (K,):
            raise ConfigError(f"RC3P state covers {rc3p.k_hat.shape[0]} classes, need {K}")
        sets &= np.asarray(ranks) <= rc3p.k_hat[None, :]
    return sets


def predict(thresholds: ThresholdMap, test_probs, spec: ScoreSpec, partition=None, prior=None,
            rc3p: Rc3pState | None = None, seed=None) -> np.ndarray:
    test_probs = np.asarray(test_probs, dtype=float)
    table = score_table(spec, test_probs, partition, prior, seed)
    return predict_from_scores(thresholds, table.scores, table.ranks, rc3p)
