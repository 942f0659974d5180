"""Run configuration shared by every command.

A config file is plain ``key = value`` lines (``#`` starts a comment); keys are
the field names of :class:`RunConfig`. Command-line flags override the file,
and the file overrides the defaults. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, fields
from datetime import datetime

from .forecast import ForestParams
from .identify import BaseParams, StackingParams
from .pipeline import PipelineParams
from .preprocess import parse_timestamp
from .severity import SamplingWeights

_SECTION = "rtap"


class ConfigError(ValueError):
    """Bad configuration key or value (a usage error)."""


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run. ``None`` means "not set" where a default is derived.

    Paths
        ``kpi``, ``alarms``: input (or, for ``simulate``, output) CSVs;
        ``model``: bundle path; ``out``: output file, stdout when unset.
    Simulation
        ``servers``, ``hours``, ``n_disks``, ``start``; ``imbalance`` defaults
        to the business's ratio; ``missing_rate`` and ``noise_rate`` corrupt
        the output when positive.
    Features
        ``lag`` hours of history, ``max_gap`` longest interpolated gap.
    Forecast
        ``n_trees``, ``max_depth``, ``min_samples_split``,
        ``feature_subset_size`` (unset: a third of the features).
    Identify
        base learner settings, ``folds``, ``l2``, ``threshold`` and
        ``classifier_source`` (``true``, ``forecast`` or ``oob``).
    Severity
        ``severity_weights``: ``auto`` or ``low,medium,high`` integers.
    Evaluation and prediction
        ``boundary`` (default: end of training), ``allow_overlap``,
        ``flat_baseline``, ``ma_window``, ``es_alpha``, ``at`` (default: last
        hour in the input), ``format`` (``csv`` or ``json``).
    """

    kpi: str | None = None
    alarms: str | None = None
    model: str | None = None
    out: str | None = None

    business: str = "Biz"
    seed: int = 0

    servers: int = 20
    hours: int = 3000
    n_disks: int = 2
    start: datetime = datetime(2019, 1, 1)
    imbalance: float | None = None
    missing_rate: float = 0.0
    noise_rate: float = 0.0

    lag: int = 3
    max_gap: int = 6

    n_trees: int = 100
    max_depth: int = 12
    min_samples_split: int = 5
    feature_subset_size: int | None = None

    dt_max_depth: int = 10
    rf_n_trees: int = 100
    rf_max_features: int | None = None
    rf_max_depth: int | None = None
    knn_k: int = 5
    gbdt_rounds: int = 100
    gbdt_learning_rate: float = 0.1
    gbdt_max_depth: int = 3
    folds: int = 5
    l2: float = 1.0
    threshold: float = 0.5
    classifier_source: str = "true"

    severity_weights: str = "auto"

    boundary: datetime | None = None
    allow_overlap: bool = False
    flat_baseline: bool = False
    ma_window: int = 3
    es_alpha: float = 0.3
    at: datetime | None = None
    format: str = "csv"

    def __post_init__(self):
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.classifier_source not in ("true", "forecast", "oob"):
            raise ConfigError(f"classifier_source must be true, forecast or oob, got {self.classifier_source!r}")
        self.weights()  # validate early

    def weights(self) -> SamplingWeights | None:
        if self.severity_weights.strip().lower() == "auto":
            return None
        try:
            parts = [int(p) for p in self.severity_weights.split(",")]
            return SamplingWeights(*parts)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"severity_weights must be 'auto' or three integers low,medium,high: {e}") from None

    def to_params(self) -> PipelineParams:
        base = BaseParams(
            dt_max_depth=self.dt_max_depth, rf_n_trees=self.rf_n_trees, rf_max_features=self.rf_max_features,
            rf_max_depth=self.rf_max_depth, knn_k=self.knn_k, gbdt_rounds=self.gbdt_rounds,
            gbdt_learning_rate=self.gbdt_learning_rate, gbdt_max_depth=self.gbdt_max_depth, seed=self.seed,
        )
        return PipelineParams(
            lag=self.lag,
            max_gap=self.max_gap,
            forest=ForestParams(n_trees=self.n_trees, max_depth=self.max_depth,
                                min_samples_split=self.min_samples_split,
                                feature_subset_size=self.feature_subset_size, seed=self.seed),
            stacking=StackingParams(base=base, folds=self.folds, l2=self.l2, threshold=self.threshold,
                                    seed=self.seed),
            severity_weights=self.weights(),
            classifier_source=self.classifier_source,
            flat_baseline=self.flat_baseline,
            ma_window=self.ma_window,
            es_alpha=self.es_alpha,
        )


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))
_HINTS = typing.get_type_hints(RunConfig)


def _base_type(hint) -> tuple[type, bool]:
    """The concrete type of a field and whether it accepts ``None``."""
    args = typing.get_args(hint)
    if args:
        concrete = [a for a in args if a is not type(None)]
        return concrete[0], len(concrete) < len(args)
    return hint, False


def coerce(key: str, text: str):
    """Convert the string ``text`` to the type of field ``key``."""
    if key not in _HINTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    typ, optional = _base_type(_HINTS[key])
    text = text.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if typ is datetime:
            return parse_timestamp(text)
        return typ(text)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def read_config_file(path: str | os.PathLike) -> dict:
    """Parse a ``key = value`` file into typed overrides."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string(f"[{_SECTION}]\n" + fh.read(), source=str(path))
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from None
    if parser.sections() != [_SECTION]:
        raise ConfigError(f"config file {path} must not contain [section] headers")
    return {k: coerce(k, v) for k, v in parser.items(_SECTION)}


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then explicit overrides."""
    values = {**(file_values or {}), **(overrides or {})}
    unknown = sorted(set(values) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def dump_config(cfg: RunConfig) -> str:
    """Render ``cfg`` in the file format; the output reads back to an equal config."""
    lines = []
    for k, v in dataclasses.asdict(cfg).items():
        if v is None:
            v = "none"
        elif isinstance(v, datetime):
            v = v.isoformat(timespec="minutes")
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
