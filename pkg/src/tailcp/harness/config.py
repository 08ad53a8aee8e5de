"""Experiment configuration: flat ``key = value`` files plus CLI overrides."""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields

from ..errors import ConfigError
from ..scores import BASE_SCORES

METHODS = ("standard", "pw", "classwise", "cluster", "rc3p", "tacp", "stacp")
WORKERS_ENV = "TAILCP_WORKERS"


@dataclass
class ExperimentConfig:
    # data source: "synthetic" or a path to a prediction CSV
    data: str = "synthetic"
    data_format: str = "probs"
    header: bool = False
    # synthetic long-tail pool
    K: int = 20
    profile: str = "exponential"
    mu: float = 50.0
    rho: float = 0.6
    n_total: int = 5500
    signal: float = 2.0
    sigma: float = 1.0
    temperature: float = 1.0
    prior_weight: float = 1.0
    regenerate: bool | None = None
    # splitting
    frac_cal: float = 0.1
    n_cal: int | None = None
    stratified: bool = False
    # sweep axes
    alphas: list[float] = field(default_factory=lambda: [0.1])
    etas: list[float] = field(default_factory=lambda: [0.5])
    methods: list[str] = field(default_factory=lambda: ["standard", "tacp"])
    scores: list[str] = field(default_factory=lambda: ["aps"])
    trials: int = 10
    seed: int = 0
    # priors and partition
    prior_source: str = "calibration"
    prior_smoothing: float = 0.0
    # TACP / sTACP
    tune: bool = True
    lam: float = 1.0
    k_r: int = 2
    randomized: bool = False
    tie_noise: float = 0.0
    holdout_frac: float = 0.0
    tacp_lambdas: list[float] | None = None
    stacp_lambdas: list[float] | None = None
    k_rs: list[int] | None = None
    # baselines
    raps_lambda: float | None = None
    raps_k: int | None = None
    cluster_m: int = 4
    cluster_gamma: float = 0.8
    rc3p_rule: str = "min_valid"
    covgap_include_empty: bool = False
    # output
    out: str | None = None
    format: str = "csv"
    workers: int | None = None

    def validate(self) -> ExperimentConfig:
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        for name in ("alphas", "etas", "methods", "scores"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be a non-empty list")
        for a in self.alphas:
            if not 0 < a < 1:
                raise ConfigError(f"alpha must be in (0, 1), got {a}")
        for e in self.etas:
            if not 0 < e <= 1:
                raise ConfigError(f"eta must be in (0, 1], got {e}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
        bad = [s for s in self.scores if s not in BASE_SCORES]
        if bad:
            raise ConfigError(f"unknown scores {bad}; expected a subset of {BASE_SCORES}")
        if self.data_format not in ("probs", "logits"):
            raise ConfigError(f"data_format must be probs or logits, got {self.data_format!r}")
        if self.profile not in ("exponential", "pareto"):
            raise ConfigError(f"profile must be exponential or pareto, got {self.profile!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.n_cal is None and not 0 < self.frac_cal < 1:
            raise ConfigError(f"frac_cal must be in (0, 1), got {self.frac_cal}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    @property
    def synthetic(self) -> bool:
        return self.data == "synthetic"

    @property
    def regenerate_data(self) -> bool:
        return self.synthetic if self.regenerate is None else self.regenerate

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return os.cpu_count() or 1

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(name, tp, raw: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if raw.lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _convert(name, inner, raw)
    if origin is list:
        (item,) = args
        return [_convert(name, item, part) for part in raw.split(",") if part.strip()]
    if tp is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {tp.__name__}") from None
    return raw


_ALIASES = {"alpha": "alphas", "eta": "etas", "method": "methods", "score": "scores",
            "lambda": "lam"}


def config_from_mapping(values: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    hints = typing.get_type_hints(ExperimentConfig)
    known = {f.name for f in fields(ExperimentConfig)}
    changes = {}
    for key, raw in values.items():
        name = _ALIASES.get(key.strip(), key.strip())
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        changes[name] = _convert(name, hints[name], raw)
    return dataclasses.replace(base or ExperimentConfig(), **changes)


def parse_kv_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(parse_kv_text(text))
