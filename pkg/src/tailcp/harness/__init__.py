"""Experiment harness: configuration, multi-trial runs, reports and the CLI."""

from .config import ExperimentConfig, config_from_mapping, load_config
from .experiment import RunResult, run, sweep_coverage_curve, tune_once
from .report import TrialRecord, parse_records_csv, records_to_csv, summarize, write_report

__all__ = [
    "ExperimentConfig", "RunResult", "TrialRecord", "config_from_mapping", "load_config",
    "parse_records_csv", "records_to_csv", "run", "summarize", "sweep_coverage_curve",
    "tune_once", "write_report",
]
