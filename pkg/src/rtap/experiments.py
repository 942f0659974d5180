"""Synthetic experiments comparing the pipeline's components with their alternatives.

Each function builds its own fleet from a seed, splits it chronologically and
returns plain numbers, so the acceptance tests and the scripts in ``scripts/``
share one implementation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .datamodel import HOUR, LabeledDataset, chronological_split
from .forecast import BaselineModel, ForestParams, fit_rfr
from .identify import KINDS, StackingParams, fit_stacking
from .metrics import SEVERITY_CLASSES, ConfusionMatrix, macro_f, precision_recall_f
from .pipeline import (
    PipelineParams,
    PreparedData,
    baseline_forecasts,
    evaluate_rows,
    fit_pipeline,
    per_target_rmse,
    prepare,
)
from .preprocess import Scaler
from .severity import UNIT_WEIGHTS, fit_knn_severity
from .synthgen import Fleet, business_fleet

TRAIN_FRACTION = 0.8
PIPELINE_VS_FLAT_PARAMS = PipelineParams(forest=ForestParams(n_trees=30), classifier_source="forecast")


@dataclass(frozen=True)
class SplitFleet:
    prepared: PreparedData
    train: LabeledDataset
    test: LabeledDataset
    boundary: datetime


def split_fleet(fleet: Fleet, lag: int = 3, train_fraction: float = TRAIN_FRACTION) -> SplitFleet:
    """Prepare a fleet and split it at ``train_fraction`` of its time span."""
    prepared = prepare(fleet.records, fleet.alarms, lag)
    boundary = fleet.start + int(round(train_fraction * fleet.hours)) * HOUR
    train, test = chronological_split(prepared.dataset, boundary)
    return SplitFleet(prepared, train, test, boundary)


def _kpi_scaler(train: LabeledDataset) -> Scaler:
    return Scaler.fit(train.X[:, : train.layout.per_hour])


@dataclass(frozen=True)
class ForecastSkill:
    rfr: dict[str, float]
    naive: dict[str, float]
    seconds: float

    def ratios(self) -> dict[str, float]:
        return {k: self.rfr[k] / self.naive[k] for k in self.rfr}


def forecast_skill(seed: int = 0, business: str = "Biz", forest: ForestParams = ForestParams()) -> ForecastSkill:
    """Test RMSE of the forest and of the persistence baseline on the default fleet."""
    t0 = time.perf_counter()
    sf = split_fleet(business_fleet(business, seed=seed))
    scaler = _kpi_scaler(sf.train).tile(sf.train.layout.lag + 1)
    model = fit_rfr(scaler.apply(sf.train.X), sf.train.Y, forest, sf.train.layout.names)
    names = sf.train.layout.names
    rfr = per_target_rmse(model.predict(scaler.apply(sf.test.X)), sf.test.Y, names)
    naive = per_target_rmse(baseline_forecasts(sf.prepared.segments, sf.test, BaselineModel("naive")),
                            sf.test.Y, names)
    return ForecastSkill(rfr, naive, time.perf_counter() - t0)


def _binary_f(y: np.ndarray, pred: np.ndarray) -> float:
    cm = ConfusionMatrix.from_labels(y, pred.astype(np.int64), ("normal", "anomaly"))
    return precision_recall_f(cm, 1)[2]


@dataclass(frozen=True)
class StackingBenefit:
    base_f: dict[str, float]
    stacking_f: float
    n_test_anomalies: int
    seconds: float

    @property
    def margin(self) -> float:
        """Stacking F-beta minus the best single base learner's."""
        return self.stacking_f - max(self.base_f.values())


def stacking_benefit(
    seed: int = 0,
    imbalance_ratio: float = 60.0,
    business: str = "Mon",
    servers: int = 20,
    hours: int = 3000,
    params: StackingParams | None = None,
) -> StackingBenefit:
    """Anomaly F-beta of each base learner and of the stack, on true KPI vectors at t+1.

    Every base learner is the stack's own refit on the full training set, so the
    comparison isolates the meta layer.
    """
    t0 = time.perf_counter()
    sf = split_fleet(business_fleet(business, servers, hours, seed, imbalance_ratio))
    scaler = _kpi_scaler(sf.train)
    Z_tr, Z_te = scaler.apply(sf.train.Y), scaler.apply(sf.test.Y)
    y_tr, y_te = sf.train.is_anomaly.astype(np.int64), sf.test.is_anomaly.astype(np.int64)
    model = fit_stacking(Z_tr, y_tr, params or StackingParams(seed=seed))
    base_f = {kind: _binary_f(y_te, clf.predict_proba(Z_te) >= model.threshold)
              for kind, clf in zip(KINDS, model.bases)}
    return StackingBenefit(base_f, _binary_f(y_te, model.predict(Z_te)), int(y_te.sum()),
                           time.perf_counter() - t0)


@dataclass(frozen=True)
class SamplingBenefit:
    weighted_macro: float
    unweighted_macro: float
    weights: tuple[int, int, int]
    test_counts: tuple[int, int, int]
    seconds: float

    @property
    def gain(self) -> float:
        return self.weighted_macro - self.unweighted_macro


def _severity_macro(truth: np.ndarray, pred: np.ndarray) -> float:
    cm = ConfusionMatrix.from_labels(truth - 1, pred - 1, SEVERITY_CLASSES[1:])
    return macro_f(cm, exclude_absent=True)


def sampling_benefit(
    seed: int = 0,
    business: str = "Biz",
    servers: int = 20,
    hours: int = 3000,
    imbalance_ratio: float = 20.0,
    n_disks: int = 8,
    cascading: bool = True,
) -> SamplingBenefit:
    """Macro F-beta over low/medium/high for kNN grading with and without replication.

    Anomalous rows come from a fleet whose alarmed hours are split 20:5:1
    across severities; features are standardized true KPI vectors. The fleet
    has eight disks per server and events that move between KPI groups hour
    by hour, so each severity shows up as many sparse signatures. On the
    default two-disk geometry replication does not help (see
    ``scripts/sampling_benefit.py --disks 2``).
    """
    t0 = time.perf_counter()
    sf = split_fleet(business_fleet(business, servers, hours, seed, imbalance_ratio,
                                    n_disks=n_disks, cascading=cascading))
    scaler = _kpi_scaler(sf.train)
    tr, te = sf.train.subset(sf.train.is_anomaly), sf.test.subset(sf.test.is_anomaly)
    Z_tr, Z_te = scaler.apply(tr.Y), scaler.apply(te.Y)
    weighted = fit_knn_severity(Z_tr, tr.severity)
    unweighted = fit_knn_severity(Z_tr, tr.severity, UNIT_WEIGHTS)
    counts = tuple(int(np.sum(te.severity == c)) for c in (1, 2, 3))
    return SamplingBenefit(
        _severity_macro(te.severity, weighted.predict(Z_te)),
        _severity_macro(te.severity, unweighted.predict(Z_te)),
        weighted.weights.as_tuple(), counts, time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class PipelineVsFlat:
    rtap_macro: float
    flat_macro: float
    rtap_per_class: dict[str, float | None] = field(default_factory=dict)
    flat_per_class: dict[str, float | None] = field(default_factory=dict)
    seconds: float = 0.0


def pipeline_vs_flat(
    seed: int = 0, business: str = "Biz", params: PipelineParams | None = None
) -> PipelineVsFlat:
    """4-class macro F-beta of the hierarchical pipeline and of one multiclass forest.

    Both classify the same forecasts produced by the same forecaster. The
    default parameters use a 30-tree forecaster and train the classifiers on
    in-sample forecasts, matching what they see at serve time.
    """
    t0 = time.perf_counter()
    sf = split_fleet(business_fleet(business, seed=seed))
    if params is None:
        params = PIPELINE_VS_FLAT_PARAMS
    params = PipelineParams(**{**params.__dict__, "flat_baseline": True})
    model = fit_pipeline(sf.train, params, business, seed)
    report = evaluate_rows(model, sf.test)
    flat = report.extra["flat_baseline"]
    return PipelineVsFlat(
        report.macro_f, flat["macro_f"],
        {k: v.f_beta for k, v in report.severity.items()}, flat["f_beta"],
        time.perf_counter() - t0,
    )
