"""Deterministic synthetic KPI fleets with injected, severity-labeled anomalies.

Each server's ``avg`` series is baseline + daily sinusoid + AR(1) noise; ``max``
and ``min`` sit a random positive spread above and below it. Disk usage grows
along a weekly sawtooth with iid noise. Anomaly events add a shift of ``m``
standard deviations to a random choice of KPI groups (cpu, mem, or one disk),
preceded by an unalarmed precursor ramp. Every hour of an event emits one alarm.

The base trace of server ``i`` uses the random stream ``(seed, 0, i)`` and event
placement uses ``(seed, 1)``, so a campaign never changes the base traces.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from scipy.signal import lfilter

from .datamodel import HOUR, AlarmRecord, KpiRecord, SeverityLevel, kpi_names

BUSINESSES = ("Biz", "Mon", "Ora", "Trd")
BUSINESS_IMBALANCE = {"Biz": 70.0, "Mon": 60.0, "Ora": 40.0, "Trd": 275.0}
DEFAULT_START = datetime(2019, 1, 1)
DEFAULT_SERVERS = 20
DEFAULT_HOURS = 3000
_DECIMALS = 6


@dataclass(frozen=True)
class ServerProfile:
    """Dynamics of one server. Levels are fractions; ``phase`` is in hours."""

    business: str = "Biz"
    cpu_level: float = 0.35
    cpu_amplitude: float = 0.12
    cpu_spread: float = 0.08
    mem_level: float = 0.55
    mem_amplitude: float = 0.05
    mem_spread: float = 0.04
    disk_levels: tuple[float, ...] = (0.30, 0.45)
    ar_coef: float = 0.6
    noise_scale: float = 0.03
    disk_drift: float = 3e-4
    disk_noise: float = 0.01
    phase: float = 0.0

    def __post_init__(self):
        if self.business not in BUSINESSES:
            raise ValueError(f"unknown business {self.business!r}")
        if not 0.0 <= self.ar_coef < 1.0:
            raise ValueError("ar_coef must lie in [0, 1)")
        if self.noise_scale < 0 or self.disk_noise < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def n_disks(self) -> int:
        return len(self.disk_levels)


def business_profiles(business: str, n_servers: int = DEFAULT_SERVERS, n_disks: int = 2) -> list[ServerProfile]:
    """Per-server profiles for a business tag, with fixed per-index jitter."""
    if business not in BUSINESSES:
        raise ValueError(f"unknown business {business!r}")
    b = BUSINESSES.index(business)
    out = []
    for i in range(n_servers):
        rng = np.random.default_rng([17, b, i])
        u = rng.uniform(-1.0, 1.0, size=6 + n_disks)
        out.append(ServerProfile(
            business=business,
            cpu_level=0.35 + 0.10 * u[0],
            cpu_amplitude=0.12 + 0.04 * u[1],
            mem_level=0.55 + 0.10 * u[2],
            mem_amplitude=0.05 + 0.02 * u[3],
            ar_coef=0.6 + 0.1 * u[4],
            phase=float(rng.integers(24)),
            disk_levels=tuple(0.30 + 0.15 * d / max(n_disks, 1) + 0.05 * u[6 + d] for d in range(n_disks)),
            disk_drift=3e-4 * (1 + 0.3 * u[5]),
        ))
    return out


@dataclass(frozen=True)
class AnomalyCampaign:
    """How many anomalous hours to inject and what each severity looks like.

    ``imbalance_ratio`` is normal hours per anomalous hour (``None`` injects
    nothing). Anomalous hours are shared among low/medium/high in proportion to
    ``severity_mix``. Severity ``c`` (1-based) shifts ``n_kpis[c-1]`` KPI groups
    by ``magnitudes[c-1]`` standard deviations for ``durations[c-1]`` hours.

    ``sigma_basis="noise"`` measures shifts in units of the KPI's noise std,
    ``"marginal"`` in units of its whole-trace std. ``magnitude_jitter`` scales
    each event's shift by a log-normal factor. With ``cascading`` the affected
    groups are redrawn for every hour of an event instead of once per event.
    """

    imbalance_ratio: float | None = 70.0
    severity_mix: tuple[float, float, float] = (20.0, 5.0, 1.0)
    magnitudes: tuple[float, float, float] = (2.0, 4.0, 6.0)
    n_kpis: tuple[int, int, int] = (1, 2, 3)
    durations: tuple[int, int, int] = (1, 2, 3)
    precursor_hours: int = 3
    precursor_scale: float = 0.5
    cooldown_hours: int = 2
    magnitude_jitter: float = 0.0
    sigma_basis: str = "marginal"
    cascading: bool = False

    def __post_init__(self):
        if self.imbalance_ratio is not None and self.imbalance_ratio <= 0:
            raise ValueError("imbalance_ratio must be positive")
        if any(m < 0 for m in self.severity_mix) or sum(self.severity_mix) <= 0:
            raise ValueError("severity_mix must be non-negative with a positive sum")
        if not (self.magnitudes[0] < self.magnitudes[1] < self.magnitudes[2]):
            raise ValueError("magnitudes must increase with severity")
        if any(d < 1 for d in self.durations) or any(k < 1 for k in self.n_kpis):
            raise ValueError("durations and n_kpis must be >= 1")
        if self.precursor_hours < 0 or self.cooldown_hours < 0:
            raise ValueError("precursor_hours and cooldown_hours must be >= 0")
        if self.sigma_basis not in ("noise", "marginal"):
            raise ValueError("sigma_basis must be 'noise' or 'marginal'")
        if self.magnitude_jitter < 0:
            raise ValueError("magnitude_jitter must be >= 0")

    @classmethod
    def none(cls) -> "AnomalyCampaign":
        return cls(imbalance_ratio=None)

    def anomalous_hours(self, total_hours: int) -> tuple[int, int, int]:
        """Target alarmed hours per severity for a fleet of ``total_hours`` server-hours."""
        if self.imbalance_ratio is None:
            return 0, 0, 0
        target = total_hours / (self.imbalance_ratio + 1.0)
        mix = np.asarray(self.severity_mix, dtype=np.float64)
        return tuple(int(round(target * m / mix.sum())) for m in mix)

    def event_counts(self, total_hours: int) -> tuple[int, int, int]:
        return tuple(int(round(h / d)) for h, d in zip(self.anomalous_hours(total_hours), self.durations))

    def hourly_rates(self, total_hours: int) -> tuple[float, float, float]:
        """Realized per-server-hour incidence of each severity."""
        counts = self.event_counts(total_hours)
        return tuple(n * d / total_hours for n, d in zip(counts, self.durations))


@dataclass(frozen=True)
class AnomalyEvent:
    server: int
    onset: int
    severity: SeverityLevel
    groups: tuple[tuple[int, ...], ...]  # affected KPI groups for each event hour
    scale: float = 1.0


@dataclass(frozen=True)
class Fleet:
    records: list[KpiRecord]
    alarms: list[AlarmRecord]
    events: list[AnomalyEvent] = field(default_factory=list)
    hours: int = 0
    start: datetime = DEFAULT_START

    def server_ids(self) -> list[str]:
        return list(dict.fromkeys(r.server_id for r in self.records))


def server_id(business: str, index: int) -> str:
    return f"{business.lower()}-{index:03d}"


def _base_trace(profile: ServerProfile, hours: int, seed: int, index: int) -> np.ndarray:
    """Unrounded ``(hours, 6 + n_disks)`` matrix before clamping."""
    rng = np.random.default_rng([seed, 0, index])
    t = np.arange(hours, dtype=np.float64)
    daily = np.sin(2.0 * np.pi * (t + profile.phase) / 24.0)
    phi = profile.ar_coef

    def ar1(scale: float) -> np.ndarray:
        z = rng.standard_normal(hours) * scale
        z[0] /= math.sqrt(1.0 - phi * phi)  # start in the stationary distribution
        return lfilter([1.0], [1.0, -phi], z)

    cols = []
    for level, amp, spread, scale in (
        (profile.cpu_level, profile.cpu_amplitude, profile.cpu_spread, profile.noise_scale),
        (profile.mem_level, profile.mem_amplitude, profile.mem_spread, profile.noise_scale / 2),
    ):
        avg = level + amp * daily + ar1(scale)
        up = spread * np.exp(0.25 * rng.standard_normal(hours))
        down = 0.8 * spread * np.exp(0.25 * rng.standard_normal(hours))
        cols.extend([avg + up, avg - down, avg])
    week = (t + 24 * index) % 168.0
    for level in profile.disk_levels:
        cols.append(level + profile.disk_drift * week + profile.disk_noise * rng.standard_normal(hours))
    return np.column_stack(cols)


def noise_sigma(profile: ServerProfile) -> np.ndarray:
    """Std of the stochastic component of each KPI group: cpu, mem, disk_0, ..."""
    ar = profile.noise_scale / math.sqrt(1.0 - profile.ar_coef ** 2)
    return np.array([ar, ar / 2] + [profile.disk_noise] * profile.n_disks)


def _groups(n_disks: int) -> list[tuple[int, ...]]:
    """Column indices shifted together for each KPI group: cpu, mem, disk_0, ..."""
    return [(0, 1, 2), (3, 4, 5)] + [(6 + d,) for d in range(n_disks)]


def _place_events(
    campaign: AnomalyCampaign, n_servers: int, hours: int, n_groups: int, seed: int, lead: int
) -> list[AnomalyEvent]:
    rng = np.random.default_rng([seed, 1])
    counts = campaign.event_counts(n_servers * hours)
    busy = np.zeros((n_servers, hours), dtype=bool)
    events = []
    pre, cool = campaign.precursor_hours, campaign.cooldown_hours
    for sev in (3, 2, 1):  # longest events first
        dur = campaign.durations[sev - 1]
        k = min(campaign.n_kpis[sev - 1], n_groups)
        lo = max(lead, pre)
        hi = hours - dur  # last admissible onset
        if counts[sev - 1] and hi < lo:
            raise ValueError("series too short to host anomaly events")
        for _ in range(counts[sev - 1]):
            for _attempt in range(10_000):
                s = int(rng.integers(n_servers))
                onset = int(rng.integers(lo, hi + 1))
                a, b = onset - pre, min(hours, onset + dur + cool)
                if not busy[s, a:b].any():
                    break
            else:
                raise ValueError(
                    "campaign too dense: more than one anomaly would have to share a server-hour; "
                    "raise the imbalance ratio or the fleet size"
                )
            busy[s, a:b] = True
            draws = dur if campaign.cascading else 1
            groups = tuple(tuple(sorted(int(g) for g in rng.choice(n_groups, size=k, replace=False)))
                           for _ in range(draws))
            groups = groups * (dur // draws)
            scale = float(np.exp(campaign.magnitude_jitter * rng.standard_normal()))
            events.append(AnomalyEvent(s, onset, SeverityLevel(sev), groups, scale))
    events.sort(key=lambda e: (e.server, e.onset))
    return events


def _finish(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0), _DECIMALS)


def generate_fleet(
    profiles: Sequence[ServerProfile] | ServerProfile,
    servers: int = DEFAULT_SERVERS,
    hours: int = DEFAULT_HOURS,
    campaign: AnomalyCampaign = AnomalyCampaign(),
    seed: int = 0,
    start: datetime = DEFAULT_START,
    lead: int = 24,
) -> Fleet:
    """Generate ``servers`` hourly traces of length ``hours`` plus their alarms.

    Server ``i`` follows ``profiles[i % len(profiles)]``. No event starts within
    the first ``lead`` hours. Raises ``ValueError`` if the requested anomalies
    cannot be placed without two events touching the same server-hour.
    """
    if isinstance(profiles, ServerProfile):
        profiles = [profiles]
    if not profiles:
        raise ValueError("at least one profile is required")
    if hours < 24 or servers < 1:
        raise ValueError("need hours >= 24 and servers >= 1")
    n_disks = profiles[0].n_disks
    if any(p.n_disks != n_disks for p in profiles):
        raise ValueError("all profiles must share the disk count")
    business = profiles[0].business
    groups = _groups(n_disks)

    events = _place_events(campaign, servers, hours, len(groups), seed, lead)
    by_server: dict[int, list[AnomalyEvent]] = {}
    for e in events:
        by_server.setdefault(e.server, []).append(e)

    stamps = [start + h * HOUR for h in range(hours)]
    names = kpi_names(n_disks)
    records: list[KpiRecord] = []
    alarms: list[AlarmRecord] = []
    pre = campaign.precursor_hours
    for i in range(servers):
        sid = server_id(business, i)
        profile = profiles[i % len(profiles)]
        base = _base_trace(profile, hours, seed, i)
        sigma = noise_sigma(profile) if campaign.sigma_basis == "noise" else \
            np.array([base[:, g[-1]].std() for g in groups])
        shift = np.zeros_like(base)
        for e in by_server.get(i, []):
            sev = int(e.severity)
            mag = campaign.magnitudes[sev - 1] * e.scale
            dur = campaign.durations[sev - 1]
            for g in e.groups[0]:
                cols = list(groups[g])
                for k in range(1, pre + 1):
                    frac = campaign.precursor_scale * (pre + 1 - k) / (pre + 1)
                    shift[e.onset - k, cols] += frac * mag * sigma[g]
            for h, hour_groups in enumerate(e.groups):
                for g in hour_groups:
                    shift[e.onset + h, list(groups[g])] += mag * sigma[g]
                label = ", ".join(names[groups[g][-1]] for g in hour_groups)
                alarms.append(AlarmRecord(sid, stamps[e.onset + h], e.severity,
                                          f"{e.severity.token} anomaly: {label}"))
        values = _finish(base + shift)
        for h in range(hours):
            records.append(KpiRecord.from_values(sid, stamps[h], values[h].tolist()))
    return Fleet(records, alarms, events, hours, start)


def business_fleet(
    business: str = "Biz",
    servers: int = DEFAULT_SERVERS,
    hours: int = DEFAULT_HOURS,
    seed: int = 0,
    imbalance_ratio: float | None = None,
    n_disks: int = 2,
    **campaign_kw,
) -> Fleet:
    """Fleet with the business's profiles and, by default, its imbalance target."""
    ratio = BUSINESS_IMBALANCE[business] if imbalance_ratio is None else imbalance_ratio
    campaign = AnomalyCampaign(imbalance_ratio=ratio, **campaign_kw)
    return generate_fleet(business_profiles(business, servers, n_disks), servers, hours, campaign, seed)


def realized_ratio(n_records: int, alarms: Sequence[AlarmRecord]) -> float:
    """Normal server-hours per alarmed server-hour."""
    anomalous = len({(a.server_id, a.timestamp) for a in alarms})
    return (n_records - anomalous) / anomalous if anomalous else math.inf


@dataclass(frozen=True)
class CorruptionSummary:
    rows_deleted: int = 0
    duplicates_injected: int = 0
    out_of_range_injected: int = 0


def _max_like(n_disks: int) -> list[int]:
    return [0, 3] + [6 + d for d in range(n_disks)]


def corrupt(
    records: Sequence[KpiRecord], missing_rate: float = 0.0, noise_rate: float = 0.0, seed: int = 0
) -> tuple[list[KpiRecord], CorruptionSummary]:
    """Delete rows and inject noise rows, each independently per row.

    A deleted row is dropped with probability ``missing_rate``. A surviving row
    is noisy with probability ``noise_rate``; half of the noisy rows are
    followed by an exact duplicate, the other half get one value pushed out of
    ``[0, 1]`` (a ``max`` or disk value above 1, or a ``min`` value below 0) so
    that cleaning clamps exactly one value and no triple needs repair.
    """
    if not (0 <= missing_rate < 1 and 0 <= noise_rate < 1):
        raise ValueError("rates must lie in [0, 1)")
    rng = np.random.default_rng([seed, 3])
    n = len(records)
    u_miss, u_noise, u_kind = rng.random(n), rng.random(n), rng.random(n)
    field_pick, excess = rng.random(n), rng.uniform(0.01, 0.5, size=n)
    out: list[KpiRecord] = []
    deleted = dups = oor = 0
    for i, rec in enumerate(records):
        if u_miss[i] < missing_rate:
            deleted += 1
            continue
        if u_noise[i] >= noise_rate:
            out.append(rec)
        elif u_kind[i] < 0.5:
            out.extend([rec, rec])
            dups += 1
        else:
            vals = list(rec.values())
            candidates = _max_like(rec.n_disks) + [1, 4]
            j = candidates[int(field_pick[i] * len(candidates))]
            vals[j] = -excess[i] if j in (1, 4) else 1.0 + excess[i]
            out.append(KpiRecord.from_values(rec.server_id, rec.timestamp, vals))
            oor += 1
    return out, CorruptionSummary(deleted, dups, oor)
