"""CSV ingestion, cleaning, gap filling and standardization.

KPI CSV columns, in this order::

    server_id, timestamp, cpu_max, cpu_min, cpu_avg, mem_max, mem_min, mem_avg,
    disk_0, ..., disk_{D-1}

Alarm CSV columns::

    server_id, timestamp, severity, content

Timestamps are ISO-8601; offsets are converted to UTC. An empty KPI cell (or
``nan``) is a missing value. Alarm timestamps are truncated to the hour; KPI
timestamps must already be hour-aligned.
"""

from __future__ import annotations

import contextlib
import csv
import io
import logging
import math
import os
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from typing import IO, Iterator

import numpy as np

from .datamodel import HOUR, AlarmRecord, KpiRecord, SeverityLevel, kpi_names
from .errors import SchemaError

logger = logging.getLogger(__name__)

KPI_BASE_COLUMNS = ("server_id", "timestamp") + kpi_names(0)
ALARM_COLUMNS = ("server_id", "timestamp", "severity", "content")
STD_FLOOR = 1e-8
_DISK_RE = re.compile(r"disk_(\d+)$")

Source = str | os.PathLike | IO[str]


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@contextlib.contextmanager
def _open(source: Source, mode: str = "r") -> Iterator[IO[str]]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, mode, newline="", encoding="utf-8") as fh:
            yield fh
    else:
        yield source


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def _parse_value(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    v = float(text)
    return None if math.isnan(v) else v


def _check_kpi_header(header: list[str] | None) -> int:
    if not header:
        raise SchemaError("KPI CSV has no header row")
    header = [h.strip() for h in header]
    base = list(KPI_BASE_COLUMNS)
    if header[: len(base)] != base:
        missing = [c for c in base if c not in header]
        raise SchemaError(f"KPI CSV header must start with {', '.join(base)}; missing {missing}")
    extra = header[len(base):]
    for i, name in enumerate(extra):
        m = _DISK_RE.match(name)
        if m is None or int(m.group(1)) != i:
            raise SchemaError(f"unknown KPI column {name!r}; expected disk_{i}")
    return len(extra)


def parse_kpi_csv(source: Source) -> tuple[list[KpiRecord], list[Diagnostic]]:
    """Parse a KPI CSV. Malformed rows become diagnostics; a bad header raises."""
    records: list[KpiRecord] = []
    diags: list[Diagnostic] = []
    with _open(source) as fh:
        reader = csv.reader(fh)
        n_disks = _check_kpi_header(next(reader, None))
        width = 8 + n_disks
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                diags.append(Diagnostic(line, f"expected {width} fields, found {len(row)}"))
                continue
            try:
                ts = parse_timestamp(row[1])
            except ValueError:
                diags.append(Diagnostic(line, f"unparseable timestamp {row[1]!r}"))
                continue
            if ts.minute or ts.second or ts.microsecond:
                diags.append(Diagnostic(line, f"timestamp {row[1]!r} is not hour-aligned"))
                continue
            try:
                values = [_parse_value(v) for v in row[2:]]
            except ValueError:
                diags.append(Diagnostic(line, "unparseable KPI value"))
                continue
            records.append(KpiRecord.from_values(row[0].strip(), ts, values))
    for d in diags:
        logger.warning("kpi csv %s", d)
    return records, diags


def parse_alarm_csv(source: Source) -> tuple[list[AlarmRecord], list[Diagnostic]]:
    """Parse an alarm CSV; severity tokens map to codes low=1, medium=2, high=3."""
    alarms: list[AlarmRecord] = []
    diags: list[Diagnostic] = []
    with _open(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError("alarm CSV has no header row")
        header = [h.strip() for h in header]
        if header != list(ALARM_COLUMNS):
            raise SchemaError(f"alarm CSV header must be {', '.join(ALARM_COLUMNS)}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                diags.append(Diagnostic(line, f"expected 4 fields, found {len(row)}"))
                continue
            try:
                ts = parse_timestamp(row[1]).replace(minute=0, second=0, microsecond=0)
            except ValueError:
                diags.append(Diagnostic(line, f"unparseable timestamp {row[1]!r}"))
                continue
            try:
                level = SeverityLevel.from_token(row[2])
            except ValueError:
                diags.append(Diagnostic(line, f"unknown severity {row[2]!r}"))
                continue
            alarms.append(AlarmRecord(row[0].strip(), ts, level, row[3]))
    for d in diags:
        logger.warning("alarm csv %s", d)
    return alarms, diags


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_kpi_csv(records: Sequence[KpiRecord], dest: Source) -> None:
    n_disks = records[0].n_disks if records else 0
    with _open(dest, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KPI_BASE_COLUMNS + tuple(f"disk_{i}" for i in range(n_disks)))
        for r in records:
            w.writerow([r.server_id, r.timestamp.isoformat(timespec="minutes"), *map(_fmt, r.values())])


def write_alarm_csv(alarms: Sequence[AlarmRecord], dest: Source) -> None:
    with _open(dest, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALARM_COLUMNS)
        for a in alarms:
            w.writerow([a.server_id, a.timestamp.isoformat(timespec="minutes"), a.severity.token, a.content])


def kpi_csv_text(records: Sequence[KpiRecord]) -> str:
    buf = io.StringIO()
    write_kpi_csv(records, buf)
    return buf.getvalue()


@dataclass
class CleaningReport:
    duplicates_removed: int = 0
    rows_dropped: int = 0
    values_clamped: int = 0
    triples_repaired: int = 0
    gaps_filled: int = 0
    series_split: int = 0

    def __add__(self, other: "CleaningReport") -> "CleaningReport":
        return CleaningReport(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def is_zero(self) -> bool:
        return all(getattr(self, f.name) == 0 for f in fields(self))

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _clamp(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def clean(records: Iterable[KpiRecord]) -> tuple[list[KpiRecord], CleaningReport]:
    """Deduplicate, drop incomplete rows, clamp into [0, 1], repair triple order.

    Output is sorted by (server_id, timestamp). For duplicated keys the first
    occurrence wins. A KPI triple violating ``min <= avg <= max`` is rebuilt by
    sorting its three values.
    """
    report = CleaningReport()
    seen: dict[tuple[str, datetime], KpiRecord] = {}
    for rec in records:
        if rec.key in seen:
            report.duplicates_removed += 1
        else:
            seen[rec.key] = rec

    out: list[KpiRecord] = []
    for key in sorted(seen):
        rec = seen[key]
        if not rec.complete:
            report.rows_dropped += 1
            continue
        raw = rec.values()
        vals = [_clamp(v) for v in raw]
        report.values_clamped += sum(int(a != b) for a, b in zip(raw, vals))
        changed = vals != list(raw)
        for base in (0, 3):
            mx, mn, avg = vals[base: base + 3]
            if not mn <= avg <= mx:
                lo, mid, hi = sorted((mx, mn, avg))
                vals[base: base + 3] = [hi, lo, mid]
                report.triples_repaired += 1
                changed = True
        out.append(KpiRecord.from_values(rec.server_id, rec.timestamp, vals) if changed else rec)
    return out, report


def fill_missing(
    series: Sequence[KpiRecord], max_gap: int = 6
) -> tuple[list[list[KpiRecord]], CleaningReport]:
    """Linearly interpolate interior gaps of at most ``max_gap`` missing hours.

    Longer gaps split the series into independent segments. Observed records are
    passed through untouched.
    """
    report = CleaningReport()
    segments: list[list[KpiRecord]] = []
    prev = None
    for rec in series:
        if prev is None:
            segments.append([rec])
            prev = rec
            continue
        if rec.server_id != prev.server_id:
            raise ValueError("fill_missing expects a single server's series")
        step = rec.timestamp - prev.timestamp
        if step <= 0 * HOUR:
            raise ValueError("series must be strictly increasing in time")
        missing = step // HOUR - 1
        if missing > max_gap:
            report.series_split += 1
            segments.append([rec])
        else:
            if missing:
                a = np.array(prev.values(), dtype=np.float64)
                b = np.array(rec.values(), dtype=np.float64)
                for j in range(1, missing + 1):
                    frac = j / (missing + 1)
                    vals = a + (b - a) * frac
                    segments[-1].append(KpiRecord.from_values(
                        rec.server_id, prev.timestamp + j * HOUR, vals.tolist()))
                report.gaps_filled += missing
            segments[-1].append(rec)
        prev = rec
    return segments, report


def preprocess(records: Iterable[KpiRecord], max_gap: int = 6) -> tuple[list[list[KpiRecord]], CleaningReport]:
    """``clean`` followed by per-server ``fill_missing``; returns gap-free segments."""
    cleaned, report = clean(records)
    segments: list[list[KpiRecord]] = []
    start = 0
    for i in range(1, len(cleaned) + 1):
        if i == len(cleaned) or cleaned[i].server_id != cleaned[start].server_id:
            segs, rep = fill_missing(cleaned[start:i], max_gap)
            segments.extend(segs)
            report = report + rep
            start = i
    return segments, report


@dataclass(frozen=True)
class Scaler:
    """Per-column z-score using training statistics (population std)."""

    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, floor: float = STD_FLOOR) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("cannot fit a scaler on an empty matrix")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        floored = std < floor
        if floored.any():
            logger.warning("zero-variance columns %s: std floored at %g",
                           np.flatnonzero(floored).tolist(), floor)
        return cls(mean, np.where(floored, floor, std), floored)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.mean):
            raise ValueError(f"expected {len(self.mean)} columns, got {X.shape[-1]}")
        return (X - self.mean) / self.std

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def tile(self, times: int) -> "Scaler":
        """The same statistics repeated for ``times`` consecutive column blocks."""
        return Scaler(np.tile(self.mean, times), np.tile(self.std, times), np.tile(self.floored, times))


def standardize_fit(X: np.ndarray) -> Scaler:
    return Scaler.fit(X)


def standardize_apply(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    return scaler.apply(X)
