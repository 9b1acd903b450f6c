"""JSON run configuration for the command-line pipeline.

A configuration document looks like::

    {
      "input": "crashes.csv",
      "schema": {"columns": {"AADT": "numeric", "male": "indicator"},
                 "transforms": [{"kind": "natural_log", "source": "AADT",
                                 "output": "LogAADT"}],
                 "severity": "severity", "area": "area", "lighting": "lighting"},
      "model": {"terms": {"Major": ["const", "LogAADT"], "Minor": ["const", "male"]},
                "random": ["Major:LogAADT"]},
      "segment_models": {"rural_dark": {...}},
      "pooled_model": {...},
      "estimation": {"n_draws": 500, "discard": 10, "retention_confidence": 0.90,
                     "test_confidence": 0.99, "covariance": "hessian",
                     "marginal_effects": "derivative"},
      "output": "out",
      "workers": 1,
      "formats": ["markdown", "csv"],
      "synth": {"n": 1000, "output": "crashes.csv", "dgp": {...}}
    }

Relative paths resolve against the configuration file's directory. A model
is either the shorthand above (``terms`` as ``{alternative: [variables]}``)
or the full form written by ``ModelSpec.to_dict``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .domain import SegmentKey
from .errors import ConfigError, CrashsevError
from .ingest import SchemaSpec
from .model import ModelSpec
from .numeric import DEFAULT_DISCARD
from .synth import DgpSpec

WORKERS_ENV = "CRASHSEV_WORKERS"
FORMATS = ("markdown", "csv")

_TOP_KEYS = {"input", "schema", "model", "segment_models", "pooled_model", "estimation",
             "output", "workers", "formats", "synth"}


@dataclass(frozen=True)
class EstimationSettings:
    n_draws: int = 500
    discard: int = DEFAULT_DISCARD
    retention_confidence: float = 0.90
    test_confidence: float = 0.99
    covariance: str = "hessian"
    marginal_effects: str = "derivative"

    def __post_init__(self):
        if not isinstance(self.n_draws, int) or self.n_draws < 1:
            raise ConfigError(f"estimation.n_draws: must be an integer >= 1, got {self.n_draws!r}")
        if not isinstance(self.discard, int) or self.discard < 0:
            raise ConfigError(f"estimation.discard: must be an integer >= 0, got {self.discard!r}")
        for key in ("retention_confidence", "test_confidence"):
            v = getattr(self, key)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"estimation.{key}: must lie in (0, 1), got {v!r}")
        if self.covariance not in ("hessian", "bhhh"):
            raise ConfigError(f"estimation.covariance: unknown method {self.covariance!r}")
        if self.marginal_effects not in ("derivative", "discrete"):
            raise ConfigError(f"estimation.marginal_effects: unknown mode "
                              f"{self.marginal_effects!r}")


@dataclass(frozen=True)
class SynthSettings:
    n: int
    dgp: DgpSpec
    output: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    path: Path
    input: Path
    schema: SchemaSpec
    model: ModelSpec
    segment_models: Mapping = field(default_factory=dict)
    pooled_model: ModelSpec | None = None
    estimation: EstimationSettings = EstimationSettings()
    output: Path = Path("out")
    workers: int | None = None
    formats: tuple = FORMATS
    synth: SynthSettings | None = None

    def spec_for(self, key: SegmentKey) -> ModelSpec:
        return self.segment_models.get(key, self.model)

    @property
    def pooled_spec(self) -> ModelSpec:
        return self.pooled_model or self.model

    def with_overrides(self, *, output=None, n_draws=None, discard=None) -> "RunConfig":
        est = self.estimation
        if n_draws is not None or discard is not None:
            est = EstimationSettings(n_draws if n_draws is not None else est.n_draws,
                                     discard if discard is not None else est.discard,
                                     est.retention_confidence, est.test_confidence,
                                     est.covariance, est.marginal_effects)
        out = Path(output) if output is not None else self.output
        return RunConfig(self.path, self.input, self.schema, self.model, self.segment_models,
                         self.pooled_model, est, out, self.workers, self.formats, self.synth)


def parse_model(d, where: str) -> ModelSpec:
    """A model from either the shorthand or the full dictionary form."""
    if not isinstance(d, Mapping) or "terms" not in d:
        raise ConfigError(f"{where}: a model needs a 'terms' entry")
    try:
        if isinstance(d["terms"], Mapping):
            extra = {k: d[k] for k in ("alternatives", "base") if k in d}
            return ModelSpec.build(d["terms"], tuple(d.get("random", ())), **extra)
        return ModelSpec.from_dict(d)
    except (CrashsevError, KeyError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def resolve_workers(cli_value=None, config_value=None) -> int:
    """Command-line value, then the environment variable, then the config, then 1."""
    for source, v in (("--workers", cli_value), (WORKERS_ENV, os.environ.get(WORKERS_ENV)),
                      ("workers", config_value)):
        if v is None or v == "":
            continue
        try:
            n = int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{source}: expected an integer, got {v!r}") from None
        if n < 1:
            raise ConfigError(f"{source}: must be >= 1, got {n}")
        return n
    return 1


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    try:
        return config_from_dict(raw, path)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(raw: Mapping, path: Path) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("top level must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}")
    base = path.parent
    rel = lambda p: (base / p) if not Path(p).is_absolute() else Path(p)
    for key in ("input", "schema", "model"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    try:
        schema = SchemaSpec.from_dict(raw["schema"])
    except CrashsevError as exc:
        raise ConfigError(f"schema: {exc}") from None
    model = parse_model(raw["model"], "model")
    segment_models = {}
    for label, m in (raw.get("segment_models") or {}).items():
        try:
            key = SegmentKey.from_label(label)
        except (CrashsevError, ValueError):
            raise ConfigError(f"segment_models: unknown segment {label!r}") from None
        segment_models[key] = parse_model(m, f"segment_models.{label}")
    pooled = parse_model(raw["pooled_model"], "pooled_model") if raw.get("pooled_model") else None
    available = schema.covariate_kinds
    for where, spec in [("model", model), ("pooled_model", pooled),
                        *((f"segment_models.{k.label}", s) for k, s in segment_models.items())]:
        if spec is None:
            continue
        missing = [v for v in spec.variables if v not in available]
        if missing:
            raise ConfigError(f"{where}: covariate(s) {missing} are not produced by the schema")
    est_raw = dict(raw.get("estimation") or {})
    unknown = set(est_raw) - set(EstimationSettings.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"estimation: unknown key(s) {sorted(unknown)}")
    estimation = EstimationSettings(**est_raw)
    formats = tuple(raw.get("formats", FORMATS))
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"formats: unknown format(s) {bad}")
    workers = raw.get("workers")
    if workers is not None:
        _check_workers(workers)
    synth = None
    if raw.get("synth") is not None:
        s = raw["synth"]
        try:
            dgp_raw = dict(s["dgp"])
            dgp_raw["model"] = parse_model(dgp_raw["model"], "synth.dgp.model").to_dict()
            dgp = DgpSpec.from_dict(dgp_raw)
            n = int(s["n"])
        except ConfigError:
            raise
        except (CrashsevError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"synth: {exc!s} ({type(exc).__name__})") from None
        if n < 1:
            raise ConfigError("synth.n: must be >= 1")
        synth = SynthSettings(n, dgp, rel(s["output"]) if s.get("output") else None)
    return RunConfig(path, rel(raw["input"]), schema, model, segment_models, pooled,
                     estimation, rel(raw.get("output", "out")), workers, formats, synth)


def _check_workers(v):
    if not isinstance(v, int) or v < 1:
        raise ConfigError(f"workers: must be an integer >= 1, got {v!r}")
