"""Command-line entry point: ``tailcp {generate,run,sweep,tune,report}``.

Settings come from a ``key = value`` file (``--config``), then from
``--set key=value`` pairs, then from the dedicated flags; later sources win.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 some config
cells failed (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np

from ..data import PredictionBatch, write_predictions
from ..errors import ConfigError, DataError
from .config import ExperimentConfig, config_from_mapping, load_config
from .experiment import CURVE_COLUMNS, build_profile, derive_seed, run, sweep_coverage_curve, \
    synth_model, tune_once
from .report import read_records, records_to_csv, records_to_json, summarize, summary_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("tailcp")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--data", help="'synthetic' or a prediction CSV path")
    p.add_argument("--alpha", help="comma-separated miscoverage levels")
    p.add_argument("--eta", help="comma-separated head-mass thresholds")
    p.add_argument("--methods", help="comma-separated subset of methods")
    p.add_argument("--scores", help="comma-separated subset of aps,lac,topk,raps")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--logits", dest="data_format", action="store_const", const="logits")
    fmt.add_argument("--probs", dest="data_format", action="store_const", const="probs")
    p.add_argument("--header", action="store_const", const=True, default=None,
                   help="prediction file has one header line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("generate", "write a synthetic long-tail prediction file"),
                        ("run", "run multi-trial experiments"),
                        ("sweep", "head/tail coverage curve over alpha = 0.01..0.20"),
                        ("tune", "print TACP/sTACP tuning tables for one split")):
        _add_common(sub.add_parser(name, help=help_))
    rep = sub.add_parser("report", help="summarize a records CSV")
    rep.add_argument("records", help="records CSV written by 'run'")
    rep.add_argument("--out")
    rep.add_argument("--format", choices=("csv", "json"), default="json")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    for flag, key in (("data", "data"), ("alpha", "alphas"), ("eta", "etas"),
                      ("methods", "methods"), ("scores", "scores"), ("trials", "trials"),
                      ("seed", "seed"), ("out", "out"), ("format", "format"),
                      ("data_format", "data_format"), ("header", "header")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = str(v)
    return config_from_mapping(overrides, cfg).validate()


def _emit(text: str, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def cmd_generate(cfg: ExperimentConfig) -> int:
    from ..data import synth_generate

    batch = synth_generate(build_profile(cfg), synth_model(cfg), derive_seed(cfg.seed, 0))
    if cfg.data_format == "logits":
        batch = PredictionBatch(batch.labels, np.log(np.maximum(batch.probs, 1e-300)), batch.K)
    write_predictions(cfg.out or sys.stdout, batch, header=bool(cfg.header))
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig) -> int:
    result = run(cfg)
    if cfg.format == "csv":
        text = records_to_csv(result.records)
    else:
        text = records_to_json(result.records, result.failures)
    _emit(text, cfg.out)
    for f in result.failures:
        log.error("failed cell %s/%s alpha=%s eta=%s: %s", f.method, f.score, f.alpha, f.eta, f.error)
    return EXIT_PARTIAL if result.partial else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    rows, result = sweep_coverage_curve(cfg, cfg.alphas if len(cfg.alphas) > 1 else None)
    if cfg.format == "json":
        _emit(json.dumps(rows, indent=2) + "\n", cfg.out)
    else:
        _emit(_rows_to_csv(rows, CURVE_COLUMNS), cfg.out)
    return EXIT_PARTIAL if result.partial else EXIT_OK


def cmd_tune(cfg: ExperimentConfig) -> int:
    rows = tune_once(cfg)
    cols = ("method", "score", "alpha", "eta", "lambda", "k_r", "objective", "best", "baseline")
    if cfg.format == "json":
        _emit(json.dumps(rows, indent=2) + "\n", cfg.out)
    else:
        _emit(_rows_to_csv(rows, cols), cfg.out)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_records(args.records)
    except OSError as exc:
        raise DataError(f"cannot read {args.records}: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if args.format == "json":
        text = records_to_json(records)
    else:
        text = summary_to_csv(summarize(records))
    _emit(text, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = resolve_config(args)
        return {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep,
                "tune": cmd_tune}[args.command](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_DATA
    except ValueError as exc:
        log.error("invalid setting: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
