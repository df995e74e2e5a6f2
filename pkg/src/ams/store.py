"""Append-only event and decision logs.

Each run writes two UTF-8 files of one JSON object per line:
``<run_id>.events.log`` and ``<run_id>.decisions.log``. Every record
carries ``schema_version`` (currently 1), ``run_id`` and ``type``.

Event records::

    {"schema_version":1,"run_id":"r1","type":"event","timestamp":1577836800,
     "kind":"impression","cost_micros":2000,"arm":"model7"}

``kind`` is ``impression``, ``click`` or ``conversion``; ``arm`` is null
for unattributed events. Decision records::

    {"schema_version":1,"run_id":"r1","type":"decision","timestamp":1577836800,
     "chosen":"model7","epsilon_used":0.3,"probabilities":[["model7",0.85],["model60",0.15]]}

Timestamps are integer seconds since the epoch and must not decrease within
a record type. Spend is integer micro-units, so round trips are exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ams.bandit import ProbabilityVector, SelectionDecision
from ams.errors import InvalidArgument, LedgerError, LogParseError, OrderingError, SchemaVersionError
from ams.events import UNATTRIBUTED, Event, EventKind, EventTable
from ams.kpi import AttributionLedger, KpiSpec, attribute_events
from ams.report import DailyRow, daily_series

SCHEMA_VERSION = 1
_KIND_LABELS = [k.label for k in EventKind]


def events_path(directory: Union[str, Path], run_id: str) -> Path:
    return Path(directory) / f"{run_id}.events.log"


def decisions_path(directory: Union[str, Path], run_id: str) -> Path:
    return Path(directory) / f"{run_id}.decisions.log"


@dataclass(frozen=True)
class LogRecord:
    record: Union[Event, SelectionDecision]
    run_id: str
    schema_version: int = SCHEMA_VERSION

    @property
    def type(self) -> str:
        return "event" if isinstance(self.record, Event) else "decision"

    @property
    def timestamp(self) -> int:
        return self.record.timestamp

    def to_json(self) -> str:
        head = {"schema_version": self.schema_version, "run_id": self.run_id, "type": self.type}
        r = self.record
        if isinstance(r, Event):
            body = {"timestamp": int(r.timestamp), "kind": r.kind.label, "cost_micros": int(r.cost_micros), "arm": r.arm}
        else:
            body = {
                "timestamp": int(r.timestamp),
                "chosen": r.chosen,
                "epsilon_used": r.epsilon_used,
                "probabilities": [[a, p] for a, p in zip(r.probabilities.arms, r.probabilities.probs)],
            }
        return json.dumps({**head, **body}, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> LogRecord:
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("record is not a JSON object")
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported schema_version {version!r}")
        kind = obj.get("type")
        if kind == "event":
            record = Event(obj["timestamp"], EventKind.parse(obj["kind"]), obj["cost_micros"], obj["arm"])
        elif kind == "decision":
            probs = ProbabilityVector(tuple(a for a, _ in obj["probabilities"]), tuple(p for _, p in obj["probabilities"]))
            record = SelectionDecision(obj["timestamp"], probs, obj["chosen"], obj["epsilon_used"])
        else:
            raise ValueError(f"unknown record type {kind!r}")
        return cls(record, obj["run_id"], version)


def _last_timestamp(path: Path) -> Optional[int]:
    if not path.exists() or path.stat().st_size == 0:
        return None
    with open(path, "rb") as fh:
        fh.seek(0, os.SEEK_END)
        pos = fh.tell()
        chunk = b""
        while pos > 0 and chunk.count(b"\n") < 2:
            step = min(4096, pos)
            pos -= step
            fh.seek(pos)
            chunk = fh.read(step) + chunk
    lines = [ln for ln in chunk.splitlines() if ln.strip()]
    return int(json.loads(lines[-1])["timestamp"]) if lines else None


class EventStore:
    """Writer for one run's pair of log files. Single writer per file."""

    def __init__(self, directory: Union[str, Path], run_id: str):
        if not run_id or any(sep in run_id for sep in ("/", "\\", os.sep)):
            raise InvalidArgument(f"run_id must be a plain file-name stem, got {run_id!r}")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id
        self.events_path = events_path(self.directory, run_id)
        self.decisions_path = decisions_path(self.directory, run_id)
        self._last = {"event": _last_timestamp(self.events_path), "decision": _last_timestamp(self.decisions_path)}
        self._files = {
            "event": open(self.events_path, "a", encoding="utf-8"),
            "decision": open(self.decisions_path, "a", encoding="utf-8"),
        }
        self._run_id_json = json.dumps(run_id)

    def _check_order(self, kind: str, first: int, last: int) -> None:
        prev = self._last[kind]
        if prev is not None and first < prev:
            raise OrderingError(f"{kind} at {first} precedes the last logged {kind} at {prev}")
        self._last[kind] = last

    def append(self, record: Union[LogRecord, Event, SelectionDecision]) -> int:
        """Append one record; returns the timestamp acknowledged."""
        if not isinstance(record, LogRecord):
            record = LogRecord(record, self.run_id)
        self._check_order(record.type, record.timestamp, record.timestamp)
        self._files[record.type].write(record.to_json() + "\n")
        return record.timestamp

    def append_events(self, events: EventTable) -> int:
        """Bulk append; returns the number of records written."""
        if not len(events):
            return 0
        ts = events.timestamp
        if not events.is_sorted():
            raise OrderingError("event batch is not time-ordered")
        self._check_order("event", int(ts[0]), int(ts[-1]))
        arm_json = [json.dumps(a) for a in events.arms] + ["null"]
        head = f'{{"schema_version":{SCHEMA_VERSION},"run_id":{self._run_id_json},"type":"event","timestamp":'
        lines = [
            f'{head}{t},"kind":"{_KIND_LABELS[k]}","cost_micros":{c},"arm":{arm_json[a]}}}\n'
            for t, k, c, a in zip(ts.tolist(), events.kind.tolist(), events.cost_micros.tolist(), events.arm.tolist())
        ]
        self._files["event"].writelines(lines)
        return len(lines)

    def append_decisions(self, decisions: Sequence[SelectionDecision]) -> int:
        for d in decisions:
            self.append(d)
        return len(decisions)

    def flush(self, fsync: bool = False) -> None:
        for fh in self._files.values():
            fh.flush()
            if fsync:
                os.fsync(fh.fileno())

    def close(self) -> None:
        for fh in self._files.values():
            if not fh.closed:
                fh.close()

    def __enter__(self) -> EventStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_KIND_CODES = {k.label: int(k) for k in EventKind}


class _Collector:
    def __init__(self):
        self.ts: list[int] = []
        self.kind: list[int] = []
        self.cost: list[int] = []
        self.arm: list[int] = []
        self.arms: dict[str, int] = {}
        self.decisions: list[SelectionDecision] = []

    def add_line(self, line: str) -> None:
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("record is not a JSON object")
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported schema_version {obj.get('schema_version')!r}")
        if obj.get("type") != "event":
            self.decisions.append(LogRecord.from_json(line).record)
            return
        # hot path: validate inline instead of building Event objects
        ts, kind, cost, arm = obj["timestamp"], obj["kind"], obj["cost_micros"], obj["arm"]
        if type(ts) is not int or type(cost) is not int or cost < 0:
            raise ValueError("timestamp and cost_micros must be non-negative integers")
        code = _KIND_CODES.get(kind)
        if code is None:
            raise ValueError(f"unknown event kind {kind!r}")
        if code != EventKind.IMPRESSION and cost:
            raise ValueError("only impressions carry cost")
        if arm is not None and not isinstance(arm, str):
            raise ValueError("arm must be a string or null")
        self.ts.append(ts)
        self.kind.append(code)
        self.cost.append(cost)
        self.arm.append(UNATTRIBUTED if arm is None else self.arms.setdefault(arm, len(self.arms)))

    def events(self) -> EventTable:
        return EventTable(
            np.array(self.ts, dtype=np.int64),
            np.array(self.kind, dtype=np.int8),
            np.array(self.cost, dtype=np.int64),
            np.array(self.arm, dtype=np.int32),
            tuple(self.arms),
        )


def load(path: Union[str, Path]) -> tuple[EventTable, list[SelectionDecision]]:
    """Parse one log file; it may hold events, decisions or both."""
    path = Path(path)
    out = _Collector()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.add_line(line)
            except SchemaVersionError as exc:
                raise SchemaVersionError(f"{path}:{lineno}: {exc}") from None
            except (ValueError, KeyError, TypeError) as exc:
                reason = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise LogParseError(path, lineno, reason, out.events(), out.decisions) from None
    return out.events(), out.decisions


def load_run(directory: Union[str, Path], run_id: str) -> tuple[EventTable, list[SelectionDecision]]:
    events, _ = load(events_path(directory, run_id))
    _, decisions = load(decisions_path(directory, run_id))
    return events, decisions


def decision_arms(decisions: Sequence[SelectionDecision]) -> tuple[str, ...]:
    if not decisions:
        return ()
    arms = decisions[0].probabilities.arms
    for d in decisions:
        if d.probabilities.arms != arms:
            raise LedgerError("decisions disagree on the registered arm set")
    return arms


def replay(
    events: EventTable, decisions: Sequence[SelectionDecision], spec: Optional[KpiSpec] = None
) -> list[DailyRow]:
    """Rebuild the per-day report from stored logs alone."""
    spec = spec or KpiSpec()
    if not decisions:
        return []
    arms = decision_arms(decisions)
    ledger = AttributionLedger.from_decisions(decisions)
    attributed = attribute_events(events, ledger, arms)
    return daily_series(attributed, decisions, arms, spec.lookback_days)
