"""Grid search of the TACP / sTACP penalty strength and rank offset."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .calibrate import conformal_quantile
from .data import PredictionBatch, split_indices
from .errors import ConfigError
from .metrics import class_covgap, head_tail_metrics
from .scores import ScoreSpec, penalty_weights, regularize, sample_uniforms, score_table

OBJECTIVES = ("covgap_ht", "covgap")

_TACP_LAMBDAS = (0.001, 0.01, 0.02, 0.05, 0.1, 0.5, 1.0)
_TACP_TOPK_LAMBDAS = (1.0, 2.0, 3.0, 4.0, 5.0)
_STACP_SMALL_LAMBDAS = (0.001, 0.01, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0)
_STACP_LARGE_LAMBDAS = (1.0, 8.0, 10.0, 50.0, 100.0, 300.0, 500.0, 800.0)


@dataclass(frozen=True)
class TuneGrid:
    lambdas: tuple[float, ...]
    k_rs: tuple[int, ...]
    objective: str

    def __post_init__(self):
        if not self.lambdas or not self.k_rs:
            raise ConfigError("tuning grids must be non-empty")
        if min(self.lambdas) < 0:
            raise ConfigError("tuning lambdas must be >= 0")
        if min(self.k_rs) < 1:
            raise ConfigError("tuning k_r values must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "k_rs", tuple(int(v) for v in self.k_rs))


def default_grid(base: str, scale: str = "small", reg: str = "tacp") -> TuneGrid:
    """Published search grids; ``scale`` is "small" (CIFAR-like) or "large"."""
    if scale not in ("small", "large"):
        raise ConfigError(f"scale must be 'small' or 'large', got {scale!r}")
    k_rs = tuple(range(1, 11 if scale == "small" else 16))
    if reg == "tacp":
        lambdas = _TACP_TOPK_LAMBDAS if base == "topk" else _TACP_LAMBDAS
        return TuneGrid(lambdas, k_rs, "covgap_ht")
    if reg == "stacp":
        lambdas = _STACP_LARGE_LAMBDAS if base in ("raps", "topk") else _STACP_SMALL_LAMBDAS
        return TuneGrid(lambdas, k_rs, "covgap")
    raise ConfigError(f"no tuning grid for regularizer {reg!r}")


def scale_for(K: int) -> str:
    return "large" if K >= 500 else "small"


@dataclass
class TuneResult:
    best_lambda: float
    best_k_r: int
    objective_value: float
    baseline_objective: float
    table: list[tuple[float, int, float]]

    def spec_for(self, spec: ScoreSpec) -> ScoreSpec:
        return dataclasses.replace(spec, lam=self.best_lambda, k_r=self.best_k_r)


def _objective(kind, sets, labels, K, alpha, partition):
    if kind == "covgap_ht":
        return head_tail_metrics(sets, labels, partition)[2]
    return class_covgap(sets, labels, K, alpha)


def tune(grid: TuneGrid, cal: PredictionBatch, alpha: float, spec: ScoreSpec, partition=None,
         prior=None, seed: int = 0, holdout_frac: float = 0.0,
         include_degenerate: bool = True) -> TuneResult:
    """Pick the (lambda, k_r) cell minimizing the grid objective.

    Each cell calibrates a regularized score on the tuning portion of
    ``cal`` and scores its prediction sets on the evaluation portion. With
    ``holdout_frac=0`` both portions are the whole calibration set;
    otherwise a seeded random split holds out that fraction for evaluation.
    ``include_degenerate`` adds ``k_r = K`` (``K + 1`` for the randomized
    penalty), whose sets coincide with the unregularized ones, so the
    chosen objective never exceeds the baseline's. Ties go to the smaller
    lambda, then the smaller k_r.
    """
    if spec.reg not in ("tacp", "stacp"):
        raise ConfigError("tuning needs a TACP or sTACP score spec")
    if cal.n == 0:
        raise ConfigError("cannot tune on an empty calibration set")
    if grid.objective == "covgap_ht" and partition is None:
        raise ConfigError("the covgap_ht objective needs a head/tail partition")
    if grid.objective == "covgap" and prior is None and spec.reg == "stacp":
        raise ConfigError("the covgap objective for sTACP needs a class prior")
    if not 0 <= holdout_frac < 1:
        raise ConfigError(f"holdout_frac must be in [0, 1), got {holdout_frac}")

    K = cal.K
    if holdout_frac > 0:
        fit_idx, eval_idx = split_indices(cal.labels, 1.0 - holdout_frac, seed)
        fit, ev = cal.take(fit_idx), cal.take(eval_idx)
        eval_seed = int(np.random.SeedSequence([int(spec.seed), 1]).generate_state(1)[0])
    else:
        fit, ev = cal, cal
        eval_seed = spec.seed

    plain = dataclasses.replace(spec, reg="none", randomized=False, lam=0.0)
    weights = penalty_weights(spec, K, partition, prior)
    fit_tab = score_table(plain, fit.probs)
    ev_tab = fit_tab if ev is fit else score_table(plain, ev.probs, seed=eval_seed)
    fit_upen = ev_upen = None
    if spec.randomized:
        fit_upen = sample_uniforms(spec.seed, fit.n, 1)
        ev_upen = fit_upen if ev is fit else sample_uniforms(eval_seed, ev.n, 1)
    fit_rows = np.arange(fit.n)

    def evaluate(lam, k_r):
        cal_scores = regularize(fit_tab.scores, fit_tab.ranks, weights, lam, k_r, fit_upen)
        tau = conformal_quantile(cal_scores[fit_rows, fit.labels], alpha)
        ev_scores = cal_scores if ev is fit else regularize(
            ev_tab.scores, ev_tab.ranks, weights, lam, k_r, ev_upen)
        return _objective(grid.objective, ev_scores <= tau, ev.labels, K, alpha, partition)

    k_rs = list(grid.k_rs)
    if include_degenerate:
        k_deg = K + 1 if spec.randomized else K
        if max(k_rs) < k_deg:
            k_rs.append(k_deg)

    table = [(lam, k_r, evaluate(lam, k_r)) for lam in grid.lambdas for k_r in k_rs]

    def key(row):
        lam, k_r, obj = row
        return (math.inf if math.isnan(obj) else obj, lam, k_r)

    best = min(table, key=key)
    tau0 = conformal_quantile(fit_tab.at(fit.labels), alpha)
    baseline = _objective(grid.objective, ev_tab.scores <= tau0, ev.labels, K, alpha, partition)
    return TuneResult(best[0], best[1], best[2], baseline, table)
