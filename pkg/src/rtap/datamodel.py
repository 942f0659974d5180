"""Record types, feature layout, alarm labeling and chronological splitting.

A server-hour is described by ``6 + n_disks`` KPI values in a fixed order::

    cpu_max, cpu_min, cpu_avg, mem_max, mem_min, mem_avg, disk_0, ..., disk_{D-1}

A feature vector at hour ``t`` concatenates that block for ``t, t-1, ..., t-L``.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

HOUR = timedelta(hours=1)
TRIPLE_KPIS = ("cpu", "mem")
TRIPLE_STATS = ("max", "min", "avg")


def kpi_names(n_disks: int) -> tuple[str, ...]:
    """Per-hour KPI column names in feature order."""
    names = [f"{k}_{s}" for k in TRIPLE_KPIS for s in TRIPLE_STATS]
    names.extend(f"disk_{i}" for i in range(n_disks))
    return tuple(names)


def to_hour64(ts: datetime) -> np.datetime64:
    return np.datetime64(ts, "h")


def from_hour64(ts: np.datetime64) -> datetime:
    return ts.astype("datetime64[h]").astype(datetime)


class SeverityLevel(enum.IntEnum):
    NORMAL = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @classmethod
    def from_token(cls, token: str) -> "SeverityLevel":
        try:
            level = cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown severity {token!r}") from None
        if level is cls.NORMAL:
            raise ValueError("an alarm cannot carry severity 'normal'")
        return level

    @property
    def token(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class KpiRecord:
    """One server-hour of KPI readings. ``None`` marks a missing value."""

    server_id: str
    timestamp: datetime
    cpu_max: float | None
    cpu_min: float | None
    cpu_avg: float | None
    mem_max: float | None
    mem_min: float | None
    mem_avg: float | None
    disk_usages: tuple[float | None, ...] = ()

    def __post_init__(self):
        ts = self.timestamp
        if ts.tzinfo is not None:
            raise ValueError("KpiRecord timestamps must be naive UTC")
        if ts.minute or ts.second or ts.microsecond:
            raise ValueError(f"timestamp {ts.isoformat()} is not hour-aligned")

    @property
    def n_disks(self) -> int:
        return len(self.disk_usages)

    @property
    def key(self) -> tuple[str, datetime]:
        return self.server_id, self.timestamp

    def values(self) -> tuple[float | None, ...]:
        return (
            self.cpu_max, self.cpu_min, self.cpu_avg,
            self.mem_max, self.mem_min, self.mem_avg,
            *self.disk_usages,
        )

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.values())

    def vector(self) -> np.ndarray:
        if not self.complete:
            raise DataError(f"record {self.server_id}@{self.timestamp.isoformat()} has missing values")
        return np.array(self.values(), dtype=np.float64)

    @classmethod
    def from_values(cls, server_id: str, timestamp: datetime, values: Sequence[float | None]) -> "KpiRecord":
        v = list(values)
        return cls(server_id, timestamp, *v[:6], disk_usages=tuple(v[6:]))


@dataclass(frozen=True)
class AlarmRecord:
    server_id: str
    timestamp: datetime
    severity: SeverityLevel
    content: str = ""

    def __post_init__(self):
        if int(self.severity) < 1:
            raise ValueError("an alarm record must carry severity low, medium or high")
        object.__setattr__(self, "severity", SeverityLevel(int(self.severity)))


@dataclass(frozen=True)
class FeatureLayout:
    """Bijection between vector indices and ``(hour offset, KPI name)``."""

    n_disks: int
    lag: int

    @property
    def names(self) -> tuple[str, ...]:
        return kpi_names(self.n_disks)

    @property
    def per_hour(self) -> int:
        return 6 + self.n_disks

    @property
    def dim(self) -> int:
        return (1 + self.lag) * self.per_hour

    def index(self, offset: int, name: str) -> int:
        """Vector index of KPI ``name`` measured ``offset`` hours before t."""
        if not 0 <= offset <= self.lag:
            raise IndexError(f"offset {offset} outside [0, {self.lag}]")
        return offset * self.per_hour + self.names.index(name)

    def locate(self, index: int) -> tuple[int, str]:
        if not 0 <= index < self.dim:
            raise IndexError(f"index {index} outside [0, {self.dim})")
        offset, k = divmod(index, self.per_hour)
        return offset, self.names[k]

    def column_names(self) -> list[str]:
        return [f"{name}@t-{o}" for o in range(self.lag + 1) for name in self.names]


@dataclass(frozen=True)
class FeatureMatrix:
    server_ids: np.ndarray
    timestamps: np.ndarray  # datetime64[h], the feature hour t
    X: np.ndarray
    layout: FeatureLayout

    def __len__(self) -> int:
        return len(self.X)


@dataclass(frozen=True)
class LabeledDataset:
    """Rows of (server, t, features at t, KPI vector at t+1, severity at t+1)."""

    server_ids: np.ndarray
    timestamps: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    severity: np.ndarray
    layout: FeatureLayout
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.X)

    @property
    def target_timestamps(self) -> np.ndarray:
        return self.timestamps + np.timedelta64(1, "h")

    @property
    def is_anomaly(self) -> np.ndarray:
        return self.severity > 0

    def subset(self, mask: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            self.server_ids[mask], self.timestamps[mask], self.X[mask], self.Y[mask],
            self.severity[mask], self.layout, dropped=0,
        )

    def time_range(self) -> tuple[np.datetime64, np.datetime64] | None:
        if len(self) == 0:
            return None
        tt = self.target_timestamps
        return tt.min(), tt.max()


@dataclass(frozen=True)
class SplitSpec:
    boundary: datetime
    n_train: int = 0
    n_test: int = 0
    warnings: tuple[str, ...] = field(default=())


def _group_by_server(records: Iterable[KpiRecord]) -> dict[str, list[KpiRecord]]:
    groups: dict[str, list[KpiRecord]] = {}
    for rec in records:
        groups.setdefault(rec.server_id, []).append(rec)
    return groups


def contiguous_runs(records: Sequence[KpiRecord]) -> list[list[KpiRecord]]:
    """Split one server's strictly increasing series at gaps longer than an hour."""
    runs: list[list[KpiRecord]] = []
    for rec in records:
        if runs and rec.timestamp - runs[-1][-1].timestamp == HOUR:
            runs[-1].append(rec)
        else:
            runs.append([rec])
    return runs


def build_feature_matrix(records: Iterable[KpiRecord], lag: int = 3) -> FeatureMatrix:
    """Build lagged feature vectors for every hour with ``lag`` hours of history.

    Records are grouped by server in order of first appearance; each server's
    records must be strictly increasing in time. Lags never reach across a gap,
    so a series split by an outage yields independent windows.
    """
    if lag < 0:
        raise ValueError("lag must be non-negative")
    groups = _group_by_server(records)
    n_disks = None
    ids, stamps, blocks = [], [], []
    for server, recs in groups.items():
        for prev, cur in zip(recs, recs[1:]):
            if cur.timestamp <= prev.timestamp:
                raise DataError(
                    f"records for server {server!r} are not strictly increasing "
                    f"at {cur.timestamp.isoformat()}"
                )
        for run in contiguous_runs(recs):
            if len(run) < lag + 1:
                continue
            values = np.stack([r.vector() for r in run])
            if n_disks is None:
                n_disks = values.shape[1] - 6
            elif values.shape[1] != 6 + n_disks:
                raise DataError("disk arity differs between records")
            n = len(run)
            blocks.append(np.hstack([values[lag - k: n - k] for k in range(lag + 1)]))
            ids.extend([server] * (n - lag))
            stamps.extend(to_hour64(r.timestamp) for r in run[lag:])
    if n_disks is None:
        n_disks = 0
        for recs in groups.values():
            n_disks = recs[0].n_disks
            break
    layout = FeatureLayout(n_disks, lag)
    X = np.vstack(blocks) if blocks else np.empty((0, layout.dim))
    return FeatureMatrix(
        np.array(ids, dtype=object), np.array(stamps, dtype="datetime64[h]"), X, layout,
    )


def index_records(records: Iterable[KpiRecord]) -> dict[tuple[str, datetime], KpiRecord]:
    return {r.key: r for r in records}


def join_alarms(
    features: FeatureMatrix,
    kpi_index: Mapping[tuple[str, datetime], KpiRecord],
    alarms: Iterable[AlarmRecord],
) -> LabeledDataset:
    """Attach the KPI vector and the alarm severity at ``t + 1`` to each feature row.

    Several alarms in one server-hour resolve to the worst severity. Rows whose
    ``t + 1`` record is absent are dropped and counted in ``dropped``.
    """
    known = set(features.server_ids.tolist()) | {k[0] for k in kpi_index}
    worst: dict[tuple[str, datetime], int] = {}
    for alarm in alarms:
        if alarm.server_id not in known:
            logger.warning("alarm for unknown server %r at %s skipped",
                           alarm.server_id, alarm.timestamp.isoformat())
            continue
        key = (alarm.server_id, alarm.timestamp)
        worst[key] = max(worst.get(key, 0), int(alarm.severity))

    keep, targets, labels = [], [], []
    for i, (server, ts) in enumerate(zip(features.server_ids, features.timestamps)):
        nxt = from_hour64(ts) + HOUR
        rec = kpi_index.get((server, nxt))
        if rec is None:
            continue
        keep.append(i)
        targets.append(rec.vector())
        labels.append(worst.get((server, nxt), 0))
    keep = np.array(keep, dtype=np.int64)
    p = features.layout.per_hour
    return LabeledDataset(
        features.server_ids[keep],
        features.timestamps[keep],
        features.X[keep],
        np.vstack(targets) if targets else np.empty((0, p)),
        np.array(labels, dtype=np.int64),
        features.layout,
        dropped=len(features) - len(keep),
    )


def chronological_split(ds: LabeledDataset, boundary: datetime) -> tuple[LabeledDataset, LabeledDataset]:
    """Rows with target timestamp ``<= boundary`` train, the rest test."""
    mask = ds.target_timestamps <= to_hour64(boundary)
    train, test = ds.subset(mask), ds.subset(~mask)
    if len(train) == 0 or len(test) == 0:
        logger.warning("split at %s leaves the %s partition empty", boundary.isoformat(),
                       "train" if len(train) == 0 else "test")
    return train, test


def concat_datasets(parts: Sequence[LabeledDataset]) -> LabeledDataset:
    if not parts:
        raise ValueError("nothing to concatenate")
    layout = parts[0].layout
    return LabeledDataset(
        np.concatenate([d.server_ids for d in parts]),
        np.concatenate([d.timestamps for d in parts]),
        np.vstack([d.X for d in parts]),
        np.vstack([d.Y for d in parts]),
        np.concatenate([d.severity for d in parts]),
        layout,
        dropped=sum(d.dropped for d in parts),
    )
