"""Multi-trial experiments: data, calibration, prediction and metrics per trial."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import calibrate as cal_mod
from ..data import (PredictionBatch, SynthModelSpec, exponential_profile_for_total,
                    load_predictions, pareto_profile, split, synth_generate)
from ..errors import ConfigError, TailCPError
from ..metrics import evaluate
from ..partition import estimate_prior, head_tail_partition
from ..scores import ScoreSpec, default_raps_constants, score_table
from ..tune import TuneGrid, default_grid, scale_for, tune
from .config import ExperimentConfig
from .report import CellFailure, TrialRecord

log = logging.getLogger(__name__)

# sub-streams of a trial seed
_DATA, _SPLIT, _CAL_U, _TEST_U, _CLUSTER, _TUNE = range(6)


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of nonnegative integers."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def trial_seed(base_seed: int, trial: int) -> int:
    return derive_seed(base_seed, trial)


def build_profile(cfg: ExperimentConfig):
    if cfg.profile == "exponential":
        return exponential_profile_for_total(cfg.K, cfg.n_total, cfg.mu)
    return pareto_profile(cfg.K, cfg.n_total, cfg.rho)


def synth_model(cfg: ExperimentConfig) -> SynthModelSpec:
    return SynthModelSpec(cfg.signal, cfg.sigma, cfg.temperature, cfg.prior_weight)


def load_source(cfg: ExperimentConfig) -> PredictionBatch | None:
    """The fixed data pool, or None when every trial regenerates its own."""
    if cfg.synthetic:
        if cfg.regenerate_data:
            return None
        return synth_generate(build_profile(cfg), synth_model(cfg), derive_seed(cfg.seed, _DATA))
    return load_predictions(cfg.data, cfg.data_format, cfg.header)


def trial_data(cfg: ExperimentConfig, seed_t: int, pool: PredictionBatch | None):
    if pool is None:
        pool = synth_generate(build_profile(cfg), synth_model(cfg), derive_seed(seed_t, _DATA))
    frac = cfg.frac_cal if cfg.n_cal is None else cfg.n_cal / pool.n
    return split(pool, frac, derive_seed(seed_t, _SPLIT), cfg.stratified)


def class_prior(cfg: ExperimentConfig, cal: PredictionBatch) -> np.ndarray:
    if cfg.prior_source == "calibration":
        return estimate_prior(cal.labels, cal.K, cfg.prior_smoothing)
    if cfg.prior_source == "profile":
        if not cfg.synthetic:
            raise ConfigError("prior_source=profile needs synthetic data")
        return build_profile(cfg).prior
    # anything else is a file of K comma/whitespace separated weights
    try:
        with open(cfg.prior_source, encoding="utf-8") as fh:
            w = np.array(fh.read().replace(",", " ").split(), dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read prior file {cfg.prior_source}: {exc}") from exc
    if w.shape != (cal.K,) or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError(f"prior file must hold {cal.K} nonnegative weights")
    return w / w.sum()


def base_spec(cfg: ExperimentConfig, score: str, K: int, seed: int) -> ScoreSpec:
    lam_d, k_d = default_raps_constants(K)
    return ScoreSpec(
        base=score,
        raps_lambda=lam_d if cfg.raps_lambda is None else cfg.raps_lambda,
        raps_k=k_d if cfg.raps_k is None else cfg.raps_k,
        seed=seed,
        tie_noise=cfg.tie_noise,
    )


def tuning_grid(cfg: ExperimentConfig, score: str, reg: str, K: int) -> TuneGrid:
    grid = default_grid(score, scale_for(K), reg)
    lambdas = cfg.tacp_lambdas if reg == "tacp" else cfg.stacp_lambdas
    return TuneGrid(lambdas or grid.lambdas, cfg.k_rs or grid.k_rs, grid.objective)


@dataclass
class CellOutcome:
    sets: np.ndarray
    lam: float | None = None
    k_r: int | None = None
    thresholds: cal_mod.ThresholdMap | None = None
    tuned: object = None


def run_method(method: str, cfg: ExperimentConfig, cal: PredictionBatch, test: PredictionBatch,
               alpha: float, partition, prior, spec: ScoreSpec, cal_tab, test_tab,
               test_seed: int, seed_t: int) -> CellOutcome:
    """Calibrate one method on ``cal`` and predict sets for ``test``."""
    K = cal.K
    cal_scores = cal_tab.at(cal.labels)
    if method == "standard":
        tm = cal_mod.calibrate_standard(cal_scores, alpha)
        return CellOutcome(cal_mod.predict_from_scores(tm, test_tab.scores), thresholds=tm)
    if method == "pw":
        tm = cal_mod.calibrate_pw(cal_scores, cal.labels, partition, alpha)
        return CellOutcome(cal_mod.predict_from_scores(tm, test_tab.scores), thresholds=tm)
    if method == "classwise":
        tm = cal_mod.calibrate_classwise(cal_scores, cal.labels, K, alpha)
        return CellOutcome(cal_mod.predict_from_scores(tm, test_tab.scores), thresholds=tm)
    if method == "cluster":
        tm = cal_mod.calibrate_cluster(cal_scores, cal.labels, K, alpha, cfg.cluster_m,
                                       cfg.cluster_gamma, derive_seed(seed_t, _CLUSTER))
        return CellOutcome(cal_mod.predict_from_scores(tm, test_tab.scores), thresholds=tm)
    if method == "rc3p":
        state = cal_mod.calibrate_rc3p(cal_scores, cal_tab.ranks_at(cal.labels), cal.labels, K,
                                       alpha, cfg.rc3p_rule)
        sets = cal_mod.predict_from_scores(state.thresholds, test_tab.scores, test_tab.ranks, state)
        return CellOutcome(sets, thresholds=state.thresholds)
    if method in ("tacp", "stacp"):
        reg_spec = dataclasses.replace(spec, reg=method,
                                       randomized=cfg.randomized and method == "tacp",
                                       lam=cfg.lam, k_r=cfg.k_r)
        tuned = None
        if cfg.tune:
            tuned = tune(tuning_grid(cfg, spec.base, method, K), cal, alpha, reg_spec,
                         partition, prior, derive_seed(seed_t, _TUNE), cfg.holdout_frac)
            reg_spec = tuned.spec_for(reg_spec)
        r_cal = score_table(reg_spec, cal.probs, partition, prior)
        tm = cal_mod.calibrate_standard(r_cal.at(cal.labels), alpha)
        r_test = score_table(reg_spec, test.probs, partition, prior, seed=test_seed)
        return CellOutcome(cal_mod.predict_from_scores(tm, r_test.scores), reg_spec.lam,
                           reg_spec.k_r, tm, tuned)
    raise ConfigError(f"unknown method {method!r}")


def run_trial(cfg: ExperimentConfig, trial: int, pool: PredictionBatch | None):
    """All config cells for one trial: (records, failures)."""
    seed_t = trial_seed(cfg.seed, trial)
    records, failures = [], []
    cal, test = trial_data(cfg, seed_t, pool)
    K = cal.K
    prior = class_prior(cfg, cal)
    cal_seed, test_seed = derive_seed(seed_t, _CAL_U), derive_seed(seed_t, _TEST_U)
    for score in cfg.scores:
        spec = base_spec(cfg, score, K, cal_seed)
        cal_tab = score_table(spec, cal.probs)
        test_tab = score_table(spec, test.probs, seed=test_seed)
        for alpha in cfg.alphas:
            for eta in cfg.etas:
                partition = head_tail_partition(prior, eta)
                for method in cfg.methods:
                    try:
                        out = run_method(method, cfg, cal, test, alpha, partition, prior, spec,
                                         cal_tab, test_tab, test_seed, seed_t)
                        m = evaluate(out.sets, test.labels, K, alpha, partition,
                                     cfg.covgap_include_empty)
                    except (TailCPError, ValueError, ArithmeticError) as exc:
                        log.warning("cell %s/%s alpha=%s eta=%s trial %d failed: %s",
                                    method, score, alpha, eta, trial, exc)
                        failures.append(CellFailure(method, score, alpha, eta, seed_t, str(exc)))
                        continue
                    records.append(TrialRecord(
                        method, score, float(alpha), float(eta), seed_t, m.coverage, m.avg_size,
                        m.cov_head, m.cov_tail, m.covgap_ht, m.covgap, out.lam, out.k_r))
    return records, failures


def _cell_order(cfg: ExperimentConfig):
    order = {}
    for m in cfg.methods:
        for s in cfg.scores:
            for a in cfg.alphas:
                for e in cfg.etas:
                    order.setdefault((m, s, float(a), float(e)), len(order))
    return order


@dataclass
class RunResult:
    records: list[TrialRecord]
    failures: list[CellFailure] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _trial_job(args):
    return run_trial(*args)


def run(cfg: ExperimentConfig) -> RunResult:
    """Run every (trial x score x alpha x eta x method) cell.

    Records are ordered by config cell, then by trial, independently of how
    many worker processes ran the trials.
    """
    cfg.validate()
    pool = load_source(cfg)
    jobs = [(cfg, t, pool) for t in range(cfg.trials)]
    workers = min(cfg.worker_count(), cfg.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    order = _cell_order(cfg)
    records, failures = [], []
    for t, (recs, fails) in enumerate(results):
        records.extend((order[r.cell], t, r) for r in recs)
        failures.extend(fails)
    records.sort(key=lambda x: (x[0], x[1]))
    return RunResult([r for _, _, r in records], failures)


SWEEP_ALPHAS = tuple(round(0.01 * i, 2) for i in range(1, 21))
CURVE_COLUMNS = ("method", "score", "alpha", "eta", "target", "coverage", "cov_head", "cov_tail",
                 "covgap_ht", "trials")


def sweep_coverage_curve(cfg: ExperimentConfig, alphas=None) -> tuple[list[dict], RunResult]:
    """Mean total / head / tail coverage per (method, score, alpha, eta).

    Defaults to target coverages 80%..99% in 1% steps.
    """
    cfg = cfg.replace(alphas=list(alphas or SWEEP_ALPHAS))
    result = run(cfg)
    groups: dict[tuple, list[TrialRecord]] = {}
    for r in result.records:
        groups.setdefault(r.cell, []).append(r)
    rows = []
    for (method, score, alpha, eta), rs in groups.items():
        rows.append({
            "method": method, "score": score, "alpha": alpha, "eta": eta,
            "target": 100.0 * (1.0 - alpha),
            "coverage": float(np.mean([r.coverage for r in rs])),
            "cov_head": float(np.nanmean([r.cov_head for r in rs])),
            "cov_tail": float(np.nanmean([r.cov_tail for r in rs])),
            "covgap_ht": float(np.nanmean([r.covgap_ht for r in rs])),
            "trials": len(rs),
        })
    return rows, result


def tune_once(cfg: ExperimentConfig, trial: int = 0) -> list[dict]:
    """Tuning tables for TACP/sTACP on one trial's calibration split."""
    cfg.validate()
    seed_t = trial_seed(cfg.seed, trial)
    cal, _ = trial_data(cfg, seed_t, load_source(cfg))
    prior = class_prior(cfg, cal)
    rows = []
    regs = [m for m in cfg.methods if m in ("tacp", "stacp")] or ["tacp", "stacp"]
    for score in cfg.scores:
        spec = base_spec(cfg, score, cal.K, derive_seed(seed_t, _CAL_U))
        for alpha in cfg.alphas:
            for eta in cfg.etas:
                partition = head_tail_partition(prior, eta)
                for reg in regs:
                    rs = dataclasses.replace(spec, reg=reg, randomized=cfg.randomized and reg == "tacp")
                    res = tune(tuning_grid(cfg, score, reg, cal.K), cal, alpha, rs, partition,
                               prior, derive_seed(seed_t, _TUNE), cfg.holdout_frac)
                    for lam, k_r, obj in res.table:
                        rows.append({"method": reg, "score": score, "alpha": alpha, "eta": eta,
                                     "lambda": lam, "k_r": k_r, "objective": obj,
                                     "best": lam == res.best_lambda and k_r == res.best_k_r,
                                     "baseline": res.baseline_objective})
    return rows

