"""End-to-end wiring: preprocess, forecast, identify, grade, evaluate.

The forecaster maps standardized lagged features at ``t`` to the raw KPI vector
at ``t + 1``. The classifiers see a standardized KPI vector: during training the
true vector at ``t + 1`` (or, with ``classifier_source="forecast"``, the
in-sample forecast of it), at prediction time the forecast.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import datetime
from typing import Literal

import numpy as np

from .datamodel import (
    HOUR,
    AlarmRecord,
    FeatureLayout,
    KpiRecord,
    LabeledDataset,
    SeverityLevel,
    build_feature_matrix,
    from_hour64,
    index_records,
    join_alarms,
    to_hour64,
)
from .errors import DataError, ModelError
from .forecast import BaselineModel, ForestModel, ForestParams, baseline_path, fit_rfr
from .identify import RandomForestClassifier, StackingModel, StackingParams, fit_stacking
from .metrics import (
    BINARY_CLASSES,
    SEVERITY_CLASSES,
    ConfusionMatrix,
    EvaluationReport,
    assemble_report,
    macro_f,
    micro_f,
    precision_recall_f,
    rmse,
)
from .preprocess import CleaningReport, Scaler, preprocess
from .severity import SamplingWeights, SeverityKnnModel, fit_knn_severity

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_TRAIN_ROWS = 24
ClassifierSource = Literal["true", "forecast", "oob"]


@dataclass(frozen=True)
class PipelineParams:
    """Settings for :func:`fit_pipeline`.

    ``classifier_source`` picks what the anomaly and severity classifiers learn
    from: ``"true"`` KPI vectors at ``t + 1``, the forecaster's in-sample
    ``"forecast"`` of them, or its out-of-bag (``"oob"``) forecasts, which
    resemble what the classifiers see when serving. All three serve on forecasts.
    """

    lag: int = 3
    max_gap: int = 6
    forest: ForestParams = field(default_factory=ForestParams)
    stacking: StackingParams = field(default_factory=StackingParams)
    severity_weights: SamplingWeights | None = None
    classifier_source: ClassifierSource = "true"
    flat_baseline: bool = False
    ma_window: int = 3
    es_alpha: float = 0.3

    def __post_init__(self):
        if self.classifier_source not in ("true", "forecast", "oob"):
            raise ValueError(f"classifier_source must be 'true', 'forecast' or 'oob', got {self.classifier_source!r}")


@dataclass(frozen=True)
class PreparedData:
    dataset: LabeledDataset
    segments: list[list[KpiRecord]]
    report: CleaningReport


def prepare(
    records: Sequence[KpiRecord], alarms: Sequence[AlarmRecord], lag: int = 3, max_gap: int = 6
) -> PreparedData:
    """Clean and gap-fill the KPI log, build lagged features and attach labels."""
    segments, report = preprocess(records, max_gap)
    flat = [r for seg in segments for r in seg]
    features = build_feature_matrix(flat, lag)
    ds = join_alarms(features, index_records(flat), alarms)
    return PreparedData(ds, segments, report)


@dataclass(frozen=True)
class PipelineModel:
    """A trained pipeline for one business tag.

    ``severity`` is ``None`` when training had too few anomalies to grade;
    ``flat`` holds the single multiclass forest used for comparison, if trained.
    """

    business: str
    layout: FeatureLayout
    scaler: Scaler
    forest: ForestModel
    stacking: StackingModel
    severity: SeverityKnnModel | None
    flat: RandomForestClassifier | None = None
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def feature_scaler(self) -> Scaler:
        return self.scaler.tile(self.layout.lag + 1)

    @property
    def train_end(self) -> datetime | None:
        end = self.metadata.get("train_end")
        return datetime.fromisoformat(end) if end else None

    def forecast(self, X: np.ndarray) -> np.ndarray:
        """Raw KPI vectors at ``t + 1`` for raw feature rows at ``t``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.layout.dim:
            raise ValueError(f"expected feature vectors of length {self.layout.dim}, got {X.shape[1]}")
        return self.forest.predict(self.feature_scaler.apply(X))

    def classify(self, Y_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(probability, flag, severity code)``; unflagged rows get code 0.

        Flagged rows without a severity model are graded low.
        """
        Z = self.scaler.apply(Y_hat)
        prob = self.stacking.predict_proba(Z)
        flag = prob >= self.stacking.threshold
        codes = np.zeros(len(Z), dtype=np.int64)
        if flag.any():
            codes[flag] = self.severity.predict(Z[flag]) if self.severity is not None else int(SeverityLevel.LOW)
        return prob, flag, codes

    def classify_flat(self, Y_hat: np.ndarray) -> np.ndarray:
        if self.flat is None:
            raise ModelError("this bundle has no flat baseline classifier")
        return self.flat.predict(self.scaler.apply(Y_hat))

    def predict(self, X: np.ndarray) -> dict[str, np.ndarray]:
        Y_hat = self.forecast(X)
        prob, flag, codes = self.classify(Y_hat)
        return {"forecast": Y_hat, "probability": prob, "is_anomaly": flag, "severity": codes}

    def to_state(self) -> dict:
        return {
            "business": self.business,
            "layout": {"n_disks": self.layout.n_disks, "lag": self.layout.lag},
            "scaler": {"mean": self.scaler.mean, "std": self.scaler.std, "floored": self.scaler.floored},
            "forest": self.forest.to_state(),
            "stacking": self.stacking.to_state(),
            "severity": None if self.severity is None else self.severity.to_state(),
            "severity_skipped": self.severity is None,
            "flat": None if self.flat is None else self.flat.to_state(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_state(cls, state: dict, format_version: int = FORMAT_VERSION) -> "PipelineModel":
        sc = state["scaler"]
        return cls(
            business=state["business"],
            layout=FeatureLayout(**state["layout"]),
            scaler=Scaler(np.asarray(sc["mean"]), np.asarray(sc["std"]), np.asarray(sc["floored"])),
            forest=ForestModel.from_state(state["forest"]),
            stacking=StackingModel.from_state(state["stacking"]),
            severity=None if state["severity"] is None else SeverityKnnModel.from_state(state["severity"]),
            flat=None if state["flat"] is None else RandomForestClassifier.from_state(state["flat"]),
            metadata=state["metadata"],
            format_version=format_version,
        )


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DataError as e:
        raise type(e)(f"{name}: {e}") from e
    except ValueError as e:
        raise DataError(f"{name}: {e}") from e


def _iso(ts: np.datetime64) -> str:
    return from_hour64(ts).isoformat(timespec="minutes")


def fit_pipeline(
    train: LabeledDataset, params: PipelineParams = PipelineParams(), business: str = "Biz", seed: int = 0,
    metadata: dict | None = None,
) -> PipelineModel:
    """Fit scaler, forecaster, stacking classifier and severity grader on ``train``."""
    if len(train) < MIN_TRAIN_ROWS:
        raise DataError(f"need at least {MIN_TRAIN_ROWS} training rows, got {len(train)}")
    layout = train.layout
    per_hour = layout.per_hour
    scaler = _stage("standardize", Scaler.fit, train.X[:, :per_hour])
    Xs = scaler.tile(layout.lag + 1).apply(train.X)
    forest = _stage("forecast", fit_rfr, Xs, train.Y, params.forest, layout.names)

    if params.classifier_source == "true":
        source = train.Y
    elif params.classifier_source == "forecast":
        source = forest.predict(Xs)
    else:
        source = forest.oob_predict(Xs)
    Z = scaler.apply(source)
    y = train.is_anomaly.astype(np.int64)
    stacking = _stage("identify", fit_stacking, Z, y, params.stacking)

    anom = train.severity > 0
    severity = None
    n_anom = int(anom.sum())
    if n_anom == 0:
        logger.warning("severity: no anomalous training rows; stage skipped")
    else:
        try:
            severity = fit_knn_severity(Z[anom], train.severity[anom], params.severity_weights)
        except ValueError as e:
            logger.warning("severity: stage skipped (%s)", e)

    flat = None
    if params.flat_baseline:
        flat = _stage("flat baseline", RandomForestClassifier.fit, Z, train.severity, params.stacking.base,
                      seed=params.stacking.seed, n_classes=len(SEVERITY_CLASSES))

    tt = train.target_timestamps
    meta = {
        "seed": seed,
        "n_train": len(train),
        "n_anomalous": n_anom,
        "train_start": _iso(tt.min()),
        "train_end": _iso(tt.max()),
        "classifier_source": params.classifier_source,
        "max_gap": params.max_gap,
        **(metadata or {}),
    }
    return PipelineModel(business, layout, scaler, forest, stacking, severity, flat, meta)


def baseline_lookup(
    segments: Sequence[Sequence[KpiRecord]], model: BaselineModel
) -> dict[tuple[str, np.datetime64], np.ndarray]:
    """Map ``(server, t)`` to the baseline's forecast of the KPI vector at ``t + 1``."""
    out = {}
    for seg in segments:
        V = np.stack([r.vector() for r in seg])
        path = baseline_path(model, V)
        for rec, row in zip(seg, path):
            if not np.isnan(row).any():
                out[(rec.server_id, to_hour64(rec.timestamp))] = row
    return out


def baseline_forecasts(
    segments: Sequence[Sequence[KpiRecord]], ds: LabeledDataset, model: BaselineModel
) -> np.ndarray:
    """Baseline forecasts aligned with the rows of ``ds`` (NaN where undefined)."""
    table = baseline_lookup(segments, model)
    out = np.full(ds.Y.shape, np.nan)
    for i, key in enumerate(zip(ds.server_ids, ds.timestamps)):
        row = table.get(key)
        if row is not None:
            out[i] = row
    return out


def per_target_rmse(pred: np.ndarray, truth: np.ndarray, names: Sequence[str]) -> dict[str, float]:
    ok = ~np.isnan(pred).any(axis=1)
    return {name: rmse(pred[ok, j], truth[ok, j]) for j, name in enumerate(names)}


def _scores(cm: ConfusionMatrix) -> dict:
    per = {}
    for i, name in enumerate(cm.classes):
        p, r, f = precision_recall_f(cm, i)
        per[name] = None if cm.support(i) == 0 else f
    return {"f_beta": per, "macro_f": macro_f(cm, exclude_absent=True), "micro_f": micro_f(cm)}


def evaluate_rows(
    model: PipelineModel,
    test: LabeledDataset,
    segments: Sequence[Sequence[KpiRecord]] = (),
    ma_window: int = 3,
    es_alpha: float = 0.3,
) -> EvaluationReport:
    """Score the pipeline on labeled rows; baselines need the underlying segments."""
    if len(test) == 0:
        raise DataError("no test rows to evaluate")
    Y_hat = model.forecast(test.X)
    names = model.layout.names
    errors = per_target_rmse(Y_hat, test.Y, names)
    baselines = {}
    if segments:
        for bl in (BaselineModel("naive"), BaselineModel("moving_average", window=ma_window),
                   BaselineModel("exponential_smoothing", alpha=es_alpha)):
            baselines[bl.label] = per_target_rmse(baseline_forecasts(segments, test, bl), test.Y, names)
    _, flag, codes = model.classify(Y_hat)
    truth = test.severity
    cm_bin = ConfusionMatrix.from_labels((truth > 0).astype(int), flag.astype(int), BINARY_CLASSES)
    cm_sev = ConfusionMatrix.from_labels(truth, codes, SEVERITY_CLASSES)
    report = assemble_report(errors, cm_bin, cm_sev, baselines)
    tt = test.target_timestamps
    report.extra.update({"test_start": _iso(tt.min()), "test_end": _iso(tt.max())})
    if model.flat is not None:
        cm_flat = ConfusionMatrix.from_labels(truth, model.classify_flat(Y_hat), SEVERITY_CLASSES)
        report.extra["flat_baseline"] = _scores(cm_flat)
    return report


def rows_after(ds: LabeledDataset, model: PipelineModel, boundary: datetime | None, allow_overlap: bool) -> LabeledDataset:
    """Rows strictly after ``boundary`` (default: the end of the training period)."""
    end = model.train_end
    if boundary is None:
        boundary = end
    elif end is not None and boundary < end and not allow_overlap:
        raise DataError(
            f"evaluation boundary {boundary.isoformat()} precedes the end of training "
            f"({end.isoformat()}); pass the overlap override to evaluate anyway"
        )
    if boundary is None:
        return ds
    return ds.subset(ds.target_timestamps > to_hour64(boundary))


def evaluate(
    model: PipelineModel,
    records: Sequence[KpiRecord],
    alarms: Sequence[AlarmRecord],
    boundary: datetime | None = None,
    allow_overlap: bool = False,
    ma_window: int = 3,
    es_alpha: float = 0.3,
) -> EvaluationReport:
    data = prepare(records, alarms, model.layout.lag, model.metadata.get("max_gap", 6))
    if data.dataset.layout != model.layout:
        raise DataError(f"test data layout {data.dataset.layout} differs from the model's {model.layout}")
    test = rows_after(data.dataset, model, boundary, allow_overlap)
    if len(test) == 0:
        raise DataError("no rows remain after the evaluation boundary")
    return evaluate_rows(model, test, data.segments, ma_window, es_alpha)


@dataclass(frozen=True)
class Prediction:
    server_id: str
    timestamp: datetime  # the predicted hour, t + 1
    forecast: tuple[float, ...]
    probability: float
    is_anomaly: bool
    severity: SeverityLevel | None


def predict_at(
    model: PipelineModel, records: Sequence[KpiRecord], at: datetime | None = None
) -> tuple[list[Prediction], list[str]]:
    """Predict hour ``at + 1`` for every server from records up to ``at``.

    Rows after ``at`` are discarded before any processing. ``at`` defaults to
    the latest timestamp present. Servers without ``lag + 1`` trailing hours
    ending at ``at`` are reported as diagnostics.
    """
    if at is None:
        if not records:
            raise DataError("no KPI records supplied")
        at = max(r.timestamp for r in records)
    kept = [r for r in records if r.timestamp <= at]
    servers = list(dict.fromkeys(r.server_id for r in kept))
    segments, _ = preprocess(kept, model.metadata.get("max_gap", 6))
    flat = [r for seg in segments for r in seg]
    fm = build_feature_matrix(flat, model.layout.lag)
    if fm.layout.n_disks != model.layout.n_disks and len(fm):
        raise DataError(f"records have {fm.layout.n_disks} disks, the model expects {model.layout.n_disks}")
    rows = np.flatnonzero(fm.timestamps == to_hour64(at))
    found = {fm.server_ids[i]: i for i in rows}
    diags = [f"server {s}: fewer than {model.layout.lag + 1} clean consecutive hours ending at "
             f"{at.isoformat(timespec='minutes')}; skipped" for s in servers if s not in found]
    for d in diags:
        logger.warning(d)
    order = [found[s] for s in servers if s in found]
    if not order:
        return [], diags
    out = model.predict(fm.X[order])
    preds = []
    target = at + HOUR
    for j, i in enumerate(order):
        flagged = bool(out["is_anomaly"][j])
        code = int(out["severity"][j])
        sev = SeverityLevel(code) if flagged and model.severity is not None else None
        preds.append(Prediction(fm.server_ids[i], target, tuple(out["forecast"][j].tolist()),
                                float(out["probability"][j]), flagged, sev))
    return preds, diags
