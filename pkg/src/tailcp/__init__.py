"""Conformal prediction under long-tail label distributions.

Split conformal calibrators (STANDARD, Partition-Wise, CLASSWISE, CLUSTER,
RC3P) and the tail-aware TACP / sTACP rank penalties, with synthetic
long-tail data, tuning and coverage-balance metrics.
"""

from .calibrate import (Rc3pState, ThresholdMap, calibrate_classwise, calibrate_cluster,
                        calibrate_pw, calibrate_rc3p, calibrate_standard, conformal_quantile,
                        predict, predict_from_scores, quantile_at_level)
from .data import (ClassProfile, PredictionBatch, SynthModelSpec, exponential_profile,
                   load_predictions, pareto_profile, split, synth_generate)
from .errors import ConfigError, DataError, ParseError, ProfileError, SplitError, TailCPError
from .metrics import MetricsReport, class_covgap, coverage_and_size, evaluate, head_tail_metrics
from .partition import HeadTailPartition, estimate_prior, head_tail_partition
from .scores import ScoreSpec, rank, rank_matrix, score_batch, score_table
from .tune import TuneGrid, TuneResult, default_grid, tune

__version__ = "0.1.0"

__all__ = [
    "ClassProfile", "ConfigError", "DataError", "HeadTailPartition", "MetricsReport",
    "ParseError", "PredictionBatch", "ProfileError", "Rc3pState", "ScoreSpec", "SplitError",
    "SynthModelSpec", "TailCPError", "ThresholdMap", "TuneGrid", "TuneResult",
    "calibrate_classwise", "calibrate_cluster", "calibrate_pw", "calibrate_rc3p",
    "calibrate_standard", "class_covgap", "conformal_quantile", "coverage_and_size",
    "default_grid", "estimate_prior", "evaluate", "exponential_profile", "head_tail_metrics",
    "head_tail_partition", "load_predictions", "pareto_profile", "predict", "predict_from_scores",
    "quantile_at_level", "rank", "rank_matrix", "score_batch", "score_table", "split",
    "synth_generate", "tune",
]
