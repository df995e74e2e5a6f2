"""Performance monitor: attribution of events to arms and windowed KPIs."""

from __future__ import annotations

import bisect
import enum
import math
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ams.bandit import ArmScore, Direction, SelectionDecision
from ams.errors import InvalidArgument, LedgerError, OrderingError
from ams.events import UNATTRIBUTED, EventKind, EventTable

SECONDS_PER_DAY = 86400
OPEN_END = np.iinfo(np.int64).max
_FLOAT_EXACT = 2**53


class KpiKind(str, enum.Enum):
    CTR = "ctr"
    CPC = "cpc"
    CPA = "cpa"

    @property
    def direction(self) -> Direction:
        return Direction.MAXIMIZE if self is KpiKind.CTR else Direction.MINIMIZE


@dataclass(frozen=True)
class KpiSpec:
    kind: KpiKind = KpiKind.CTR
    lookback_days: float = 30.0
    min_samples: int = 100

    def __post_init__(self):
        if not isinstance(self.kind, KpiKind):
            try:
                object.__setattr__(self, "kind", KpiKind(str(self.kind).lower()))
            except ValueError:
                raise InvalidArgument(f"unknown KPI kind {self.kind!r}") from None
        if not (math.isfinite(self.lookback_days) and self.lookback_days > 0):
            raise InvalidArgument(f"lookback_days must be positive, got {self.lookback_days}")
        if int(self.min_samples) != self.min_samples or self.min_samples < 1:
            raise InvalidArgument(f"min_samples must be a positive integer, got {self.min_samples}")

    @property
    def direction(self) -> Direction:
        return self.kind.direction

    def window_start(self, now: int) -> int:
        # first integer timestamp inside [now - lookback, now)
        return math.ceil(now - self.lookback_days * SECONDS_PER_DAY)


@dataclass(frozen=True)
class ArmKpiSnapshot:
    arm: str
    window_start: int
    window_end: int
    impressions: int
    clicks: int
    conversions: int
    spend_micros: int
    kpi_value: Optional[float]

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "impressions": self.impressions,
            "clicks": self.clicks,
            "conversions": self.conversions,
            "spend_micros": self.spend_micros,
            "kpi_value": self.kpi_value,
        }


def kpi_value(kind: KpiKind, impressions: int, clicks: int, conversions: int, spend_micros: int) -> Optional[float]:
    if kind is KpiKind.CTR:
        num, den = clicks, impressions
    elif kind is KpiKind.CPC:
        num, den = spend_micros, clicks
    else:
        num, den = spend_micros, conversions
    return None if den == 0 else num / den


class AttributionLedger:
    """Half-open activation intervals ``[start, end)`` with the arm live in each."""

    def __init__(self, starts: Sequence[int], ends: Sequence[int], arms: Sequence[str]):
        self.starts = np.asarray(starts, dtype=np.int64)
        self.ends = np.asarray(ends, dtype=np.int64)
        self.arms = tuple(arms)
        if not (len(self.starts) == len(self.ends) == len(self.arms)):
            raise LedgerError("ledger columns differ in length")
        if np.any(self.ends <= self.starts):
            raise LedgerError("ledger interval with end <= start")
        if np.any(self.starts[1:] < self.ends[:-1]):
            raise LedgerError("ledger intervals are unsorted or overlapping")

    @classmethod
    def from_decisions(cls, decisions: Sequence[SelectionDecision], end: Optional[int] = None) -> AttributionLedger:
        """Each decision owns time until the next one; the last runs to ``end`` (open if None)."""
        starts = [d.timestamp for d in decisions]
        ends = starts[1:] + ([OPEN_END if end is None else end] if decisions else [])
        return cls(starts, ends, [d.chosen for d in decisions])

    def __len__(self) -> int:
        return len(self.starts)

    def intervals(self) -> list[tuple[int, int, str]]:
        return list(zip(self.starts.tolist(), self.ends.tolist(), self.arms))

    def lookup(self, timestamps: np.ndarray) -> np.ndarray:
        """Interval index per timestamp, -1 outside every interval."""
        idx = np.searchsorted(self.starts, timestamps, side="right") - 1
        inside = idx >= 0
        inside[inside] = timestamps[inside] < self.ends[idx[inside]]
        return np.where(inside, idx, -1)


def attribute_events(events: EventTable, ledger: AttributionLedger, arms: Optional[Sequence[str]] = None) -> EventTable:
    """Stamp each event with the arm whose interval contains its timestamp.

    A timestamp equal to a swap boundary belongs to the incoming arm. Events
    outside every interval come back unattributed.
    """
    if arms is None:
        arms = tuple(dict.fromkeys(events.arms + ledger.arms))
    arms = tuple(arms)
    code = {a: i for i, a in enumerate(arms)}
    unknown = sorted(set(ledger.arms) - set(code))
    if unknown:
        raise LedgerError(f"ledger references unknown arms {unknown}")
    interval_code = np.array([code[a] for a in ledger.arms] + [UNATTRIBUTED], dtype=np.int32)
    idx = ledger.lookup(events.timestamp)
    return events.with_arms(interval_code[idx], arms)


def _counts(events: EventTable, n_arms: int, start: Optional[int] = None, end: Optional[int] = None) -> np.ndarray:
    """(n_arms, 4) array of impressions, clicks, conversions, spend in [start, end).

    Without bounds every event counts.
    """
    ts = events.timestamp
    if start is None:
        kind, arm, cost = events.kind, events.arm, events.cost_micros
    elif events.is_sorted():
        lo, hi = np.searchsorted(ts, [start, end], side="left")
        kind, arm, cost = events.kind[lo:hi], events.arm[lo:hi], events.cost_micros[lo:hi]
    else:
        mask = (ts >= start) & (ts < end)
        kind, arm, cost = events.kind[mask], events.arm[mask], events.cost_micros[mask]
    n_kinds = len(EventKind)
    # bucket (arm + 1, kind); bucket row 0 collects unattributed events
    key = (arm.astype(np.int64) + 1) * n_kinds + kind
    size = (n_arms + 1) * n_kinds
    out = np.zeros((n_arms, 4), dtype=np.int64)
    out[:, :n_kinds] = np.bincount(key, minlength=size).reshape(n_arms + 1, n_kinds)[1:]
    if len(cost) and int(cost.max()) * len(cost) < _FLOAT_EXACT:
        # float64 partial sums are exact integers below 2**53
        spend = np.bincount(key, weights=cost, minlength=size).reshape(n_arms + 1, n_kinds)
        out[:, 3] = spend[1:, EventKind.IMPRESSION].astype(np.int64)
    elif len(cost):
        imp = kind == EventKind.IMPRESSION
        for i in range(n_arms):
            out[i, 3] = cost[imp & (arm == i)].sum()
    return out


def snapshot_attributed(events: EventTable, spec: KpiSpec, arms: Sequence[str], now: int) -> list[ArmKpiSnapshot]:
    """Per-arm windowed snapshots for events that already carry arm codes."""
    events = events.recode(arms)
    start = spec.window_start(now)
    return _snapshots(_counts(events, len(arms), start, now), spec, arms, start, now)


def _snapshots(counts: np.ndarray, spec: KpiSpec, arms: Sequence[str], start: int, now: int) -> list[ArmKpiSnapshot]:
    snaps = []
    for i, arm in enumerate(arms):
        imp, clk, conv, spend = (int(x) for x in counts[i])
        snaps.append(ArmKpiSnapshot(arm, start, now, imp, clk, conv, spend, kpi_value(spec.kind, imp, clk, conv, spend)))
    return snaps


def windowed_kpi(events: EventTable, spec: KpiSpec, now: int, arm: Optional[str] = None) -> ArmKpiSnapshot:
    """KPI over ``[now - lookback, now)`` for events attributed to a single arm."""
    codes = np.unique(events.arm)
    if arm is None:
        if len(codes) != 1 or codes[0] == UNATTRIBUTED:
            raise InvalidArgument("windowed_kpi needs events attributed to exactly one arm")
        arm = events.arms[codes[0]]
    elif len(events) and (len(codes) != 1 or codes[0] == UNATTRIBUTED or events.arms[codes[0]] != arm):
        raise InvalidArgument(f"events are not all attributed to {arm!r}")
    if arm not in events.arms:
        events = events.with_arms(events.arm, events.arms + (arm,))
    return snapshot_attributed(events, spec, [arm], now)[0]


def scores_from_snapshots(snapshots: Sequence[ArmKpiSnapshot], spec: KpiSpec) -> list[ArmScore]:
    return [
        ArmScore(
            arm=s.arm,
            kpi_value=s.kpi_value,
            direction=spec.direction,
            samples=s.impressions,
            # an undefined KPI never qualifies, whatever the volume
            qualified=s.impressions >= spec.min_samples and s.kpi_value is not None,
        )
        for s in snapshots
    ]


def snapshot_all(
    events: EventTable, ledger: AttributionLedger, spec: KpiSpec, arms: Sequence[str], now: int
) -> list[ArmScore]:
    """Attribute raw events through the ledger and score every registered arm."""
    attributed = attribute_events(events, ledger, arms)
    return scores_from_snapshots(snapshot_attributed(attributed, spec, arms, now), spec)


class EventBuffer:
    """Append-only, time-ordered event store for one run.

    One writer appends; readers call :meth:`table` and get a view of a
    consistent prefix of everything appended so far. Storage grows by
    doubling, so earlier views stay valid.
    """

    def __init__(self, arms: Sequence[str], capacity: int = 4096):
        self.arms = tuple(arms)
        self._ts = np.empty(capacity, np.int64)
        self._kind = np.empty(capacity, np.int8)
        self._cost = np.empty(capacity, np.int64)
        self._arm = np.empty(capacity, np.int32)
        self._n = 0
        # running (arm, 4) totals at each chunk end, for O(chunk) window queries
        self._chunk_ends: list[int] = [0]
        self._cum: list[np.ndarray] = [np.zeros((len(self.arms), 4), np.int64)]
        self._lock = threading.Lock()

    def append(self, events: EventTable) -> None:
        if not len(events):
            return
        events = events.recode(self.arms)
        if not events.is_sorted():
            raise OrderingError("event batch is not time-ordered")
        with self._lock:
            n, k = self._n, len(events)
            if n and events.timestamp[0] < self._ts[n - 1]:
                raise OrderingError(f"event at {events.timestamp[0]} precedes buffered event at {self._ts[n - 1]}")
            if n + k > len(self._ts):
                self._grow(n + k)
            self._ts[n:n + k] = events.timestamp
            self._kind[n:n + k] = events.kind
            self._cost[n:n + k] = events.cost_micros
            self._arm[n:n + k] = events.arm
            self._cum.append(self._cum[-1] + _counts(events, len(self.arms)))
            self._chunk_ends.append(n + k)
            self._n = n + k

    def _grow(self, needed: int) -> None:
        size = len(self._ts)
        while size < needed:
            size *= 2
        for name in ("_ts", "_kind", "_cost", "_arm"):
            old = getattr(self, name)
            new = np.empty(size, old.dtype)
            new[:self._n] = old[:self._n]
            setattr(self, name, new)

    @property
    def last_timestamp(self) -> Optional[int]:
        return int(self._ts[self._n - 1]) if self._n else None

    def __len__(self) -> int:
        return self._n

    def _prefix(self, idx: int, n_chunks: int) -> np.ndarray:
        """Totals over the first ``idx`` buffered events."""
        c = bisect.bisect_right(self._chunk_ends, idx, 0, n_chunks) - 1
        base = self._chunk_ends[c]
        if idx == base:
            return self._cum[c]
        part = EventTable(self._ts[base:idx], self._kind[base:idx], self._cost[base:idx], self._arm[base:idx], self.arms, is_sorted=True)
        return self._cum[c] + _counts(part, len(self.arms))

    def snapshot(self, spec: KpiSpec, now: int) -> list[ArmKpiSnapshot]:
        """Same result as :func:`snapshot_attributed` over :meth:`table`, without a full scan."""
        with self._lock:
            n = self._n
            n_chunks = len(self._chunk_ends)
            ts = self._ts[:n]
        start = spec.window_start(now)
        lo, hi = np.searchsorted(ts, [start, now], side="left")
        counts = self._prefix(int(hi), n_chunks) - self._prefix(int(lo), n_chunks)
        return _snapshots(counts, spec, self.arms, start, now)

    def table(self) -> EventTable:
        with self._lock:
            n = self._n
            return EventTable(self._ts[:n], self._kind[:n], self._cost[:n], self._arm[:n], self.arms, is_sorted=True)
