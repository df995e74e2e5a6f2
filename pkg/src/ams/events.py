"""Traffic events and their columnar container.

Single events are :class:`Event` records. Anything bulk (simulator output,
logs, KPI input) travels as an :class:`EventTable`: parallel numpy columns
plus the tuple of arm ids that the integer ``arm`` column indexes into
(``-1`` means unattributed).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from ams.errors import InvalidArgument

UNATTRIBUTED = -1


class EventKind(enum.IntEnum):
    IMPRESSION = 0
    CLICK = 1
    CONVERSION = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> EventKind:
        if isinstance(value, EventKind):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise InvalidArgument(f"unknown event kind {value!r}") from None
        return cls(value)


@dataclass(frozen=True)
class Event:
    timestamp: int
    kind: EventKind
    cost_micros: int = 0
    arm: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind.parse(self.kind))
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, (int, np.integer)):
            raise InvalidArgument(f"timestamp must be an integer, got {self.timestamp!r}")
        if self.cost_micros < 0:
            raise InvalidArgument("cost_micros must be non-negative")
        if self.kind is not EventKind.IMPRESSION and self.cost_micros != 0:
            raise InvalidArgument("only impressions carry cost")


class EventTable:
    """Immutable-by-convention columnar batch of events."""

    __slots__ = ("timestamp", "kind", "cost_micros", "arm", "arms", "_sorted")

    def __init__(self, timestamp, kind, cost_micros, arm, arms: Sequence[str], *, is_sorted: Optional[bool] = None):
        self.timestamp = np.asarray(timestamp, dtype=np.int64)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.cost_micros = np.asarray(cost_micros, dtype=np.int64)
        self.arm = np.asarray(arm, dtype=np.int32)
        self.arms = tuple(arms)
        n = len(self.timestamp)
        if not (len(self.kind) == len(self.cost_micros) == len(self.arm) == n):
            raise InvalidArgument("event columns differ in length")
        self._sorted = is_sorted

    @classmethod
    def empty(cls, arms: Sequence[str] = ()) -> EventTable:
        return cls(np.empty(0, np.int64), np.empty(0, np.int8), np.empty(0, np.int64), np.empty(0, np.int32), arms)

    @classmethod
    def from_events(cls, events: Iterable[Event], arms: Sequence[str] = ()) -> EventTable:
        events = list(events)
        arms = list(arms)
        for e in events:
            if e.arm is not None and e.arm not in arms:
                arms.append(e.arm)
        code = {a: i for i, a in enumerate(arms)}
        return cls(
            [e.timestamp for e in events],
            [int(e.kind) for e in events],
            [e.cost_micros for e in events],
            [UNATTRIBUTED if e.arm is None else code[e.arm] for e in events],
            arms,
        )

    @classmethod
    def concat(cls, tables: Sequence[EventTable], arms: Optional[Sequence[str]] = None) -> EventTable:
        if arms is None:
            arms = tables[0].arms if tables else ()
        if not tables:
            return cls.empty(arms)
        for t in tables:
            if t.arms != tuple(arms) and len(t):
                raise InvalidArgument("cannot concatenate tables with different arm sets")
        return cls(
            np.concatenate([t.timestamp for t in tables]),
            np.concatenate([t.kind for t in tables]),
            np.concatenate([t.cost_micros for t in tables]),
            np.concatenate([t.arm for t in tables]),
            arms,
        )

    def __len__(self) -> int:
        return len(self.timestamp)

    def __iter__(self) -> Iterator[Event]:
        for ts, kind, cost, arm in zip(self.timestamp.tolist(), self.kind.tolist(), self.cost_micros.tolist(), self.arm.tolist()):
            yield Event(ts, EventKind(kind), cost, None if arm == UNATTRIBUTED else self.arms[arm])

    def to_events(self) -> list[Event]:
        return list(self)

    def take(self, index) -> EventTable:
        return EventTable(self.timestamp[index], self.kind[index], self.cost_micros[index], self.arm[index], self.arms)

    def with_arms(self, arm_codes, arms: Sequence[str]) -> EventTable:
        return EventTable(self.timestamp, self.kind, self.cost_micros, arm_codes, arms, is_sorted=self._sorted)

    def recode(self, arms: Sequence[str]) -> EventTable:
        """Re-express the arm column against another arm tuple."""
        arms = tuple(arms)
        if arms == self.arms:
            return self
        missing = [a for a in self.arms if a not in arms]
        used = set(np.unique(self.arm[self.arm >= 0]).tolist())
        if any(self.arms.index(a) in used for a in missing):
            raise InvalidArgument(f"events reference arms outside {arms}")
        lookup = np.array([arms.index(a) if a in arms else UNATTRIBUTED for a in self.arms] + [UNATTRIBUTED], dtype=np.int32)
        # code -1 indexes the trailing sentinel
        return self.with_arms(lookup[self.arm], arms)

    def is_sorted(self) -> bool:
        if self._sorted is None:
            ts = self.timestamp
            self._sorted = bool((ts[1:] >= ts[:-1]).all())
        return self._sorted

    def sorted(self) -> EventTable:
        if self.is_sorted():
            return self
        return self.take(np.lexsort((self.kind, self.timestamp)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventTable):
            return NotImplemented
        return (
            self.arms == other.arms
            and np.array_equal(self.timestamp, other.timestamp)
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.cost_micros, other.cost_micros)
            and np.array_equal(self.arm, other.arm)
        )

    def __repr__(self) -> str:
        return f"EventTable(n={len(self)}, arms={self.arms})"
