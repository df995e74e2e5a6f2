"""HTTP service mode.

One campaign per process. A single :class:`Runtime` owns the selector; the
request handlers only go through its lock-protected methods and read the
snapshots it publishes at each KPI refresh.

Endpoints (JSON, versioned under ``/v1``)::

    POST /v1/runs          start a run from a config body (409 if one is active)
    GET  /v1/runs/{id}     run config and status (404 if unknown)
    GET  /v1/selection     active arm and probability vector
    POST /v1/events        {"events": [{"timestamp", "kind", "cost_micros"}]}
    GET  /v1/stats         per-arm snapshots from the last refresh and current epsilon

Every decision and every accepted event is written to the run's logs before
the request returns, so a restarted service rebuilds the same state from disk.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import threading
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from ams.config import RunConfig, build_config
from ams.errors import ConfigError, OrderingError
from ams.events import EventKind, EventTable
from ams.selector import Clock, Selector, WallClock, split_rng
from ams.store import EventStore, load_run

log = logging.getLogger(__name__)


def config_path(directory: Union[str, Path], run_id: str) -> Path:
    return Path(directory) / f"{run_id}.config.json"


class EventIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    timestamp: int = Field(ge=0)
    kind: Literal["impression", "click", "conversion"]
    cost_micros: int = Field(default=0, ge=0)


class EventBatch(BaseModel):
    model_config = ConfigDict(extra="forbid")

    events: list[EventIn]


class Runtime:
    """Selector, log writer and published stats for the service's one run."""

    def __init__(self, out: Union[str, Path], clock: Optional[Clock] = None):
        self.out = Path(out)
        self.clock = clock or WallClock()
        self.config: Optional[RunConfig] = None
        self.selector: Optional[Selector] = None
        self.store: Optional[EventStore] = None
        self.end_time: Optional[int] = None
        self._lock = threading.RLock()

    @property
    def run_id(self) -> Optional[str]:
        return self.config.resolved_run_id if self.config else None

    @property
    def active(self) -> bool:
        return self.selector is not None and self.selector.state.now < self.end_time

    def start(self, config: RunConfig) -> dict:
        with self._lock:
            if self.active:
                raise RuntimeError(f"run {self.run_id} is still active")
            if not config.arms:
                raise ConfigError("live runs need a list of arms")
            run_id = config.resolved_run_id
            if config_path(self.out, run_id).exists():
                raise ConfigError(f"run {run_id} already exists in {self.out}")
            start = int(self.clock.now())
            config = dataclasses.replace(config, start_time=start, run_id=run_id)
            self.out.mkdir(parents=True, exist_ok=True)
            config_path(self.out, run_id).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
            self._open(config)
            self.tick()
            return self.describe()

    def resume(self, run_id: str) -> dict:
        """Rebuild a run's state from its persisted config and logs."""
        with self._lock:
            path = config_path(self.out, run_id)
            if not path.exists():
                raise KeyError(run_id)
            config = build_config(json.loads(path.read_text()))
            events, decisions = load_run(self.out, run_id)
            self._open(config, restart=len(decisions))
            self.selector.restore(decisions, events)
            self.tick()
            return self.describe()

    def _open(self, config: RunConfig, restart: int = 0) -> None:
        if self.store is not None:
            self.store.close()
        policy_rng, _ = split_rng(config.seed)
        if restart:
            # the pre-restart stream is not persisted; continue on a derived one
            policy_rng = np.random.default_rng([config.seed, restart])
        self.config = config
        self.selector = Selector(config.arms, config.policy, config.schedule, config.kpi, policy_rng, config.start_time)
        self.store = EventStore(self.out, config.resolved_run_id)
        self.end_time = config.start_time + config.schedule.run_duration

    def tick(self) -> None:
        """Advance the selector to the service clock, logging any decision."""
        with self._lock:
            sel = self.selector
            if sel is None or sel.state.now >= self.end_time and sel.state.decision_log:
                return
            now = min(int(self.clock.now()), self.end_time)

            class _At:
                @staticmethod
                def now() -> int:
                    return now

            decision = sel.tick(_At)
            if decision is not None:
                self.store.append(decision)
                self.store.flush()

    def ingest(self, batch: list[EventIn]) -> int:
        """Attribute, buffer and log a time-ordered batch.

        Events stamped before the service clock are ingested before the
        selector catches up, so a refresh due now still counts them. Events
        older than an already published refresh are rejected: accepting them
        would make the logs disagree with the stats that were served.
        """
        with self._lock:
            sel = self.selector
            if sel is None:
                raise LookupError("no run has been started")
            if not batch:
                return 0
            ts = np.array([e.timestamp for e in batch], dtype=np.int64)
            if np.any(np.diff(ts) < 0):
                raise OrderingError("events in a batch must be time-ordered")
            now = min(int(self.clock.now()), self.end_time)
            if ts[-1] > now:
                raise OrderingError(f"event at {int(ts[-1])} is ahead of the service clock ({now})")
            if ts[0] < sel.state.start_time:
                raise OrderingError(f"event at {int(ts[0])} precedes the run start {sel.state.start_time}")
            floor = max([sel.buffer.last_timestamp or 0] + sel.state.refresh_times[-1:])
            if ts[0] < floor:
                raise OrderingError(f"event at {int(ts[0])} precedes already processed data at {floor}")
            kinds = np.array([int(EventKind.parse(e.kind)) for e in batch], dtype=np.int8)
            cost = np.array([e.cost_micros for e in batch], dtype=np.int64)
            if np.any((kinds != EventKind.IMPRESSION) & (cost != 0)):
                raise ValueError("only impressions carry cost_micros")
            table = EventTable(ts, kinds, cost, np.full(len(ts), -1, np.int32), sel.arms, is_sorted=True)
            split = int(np.searchsorted(ts, now, side="left"))
            self._ingest(table.take(np.arange(split)))
            self.tick()
            self._ingest(table.take(np.arange(split, len(ts))))
            self.store.flush()
            return len(batch)

    def _ingest(self, table: EventTable) -> None:
        if len(table):
            self.store.append_events(self.selector.ingest(table))

    def selection(self) -> dict:
        with self._lock:
            if self.selector is None:
                raise LookupError("no run has been started")
            self.tick()
            d = self.selector.state.decision_log[-1]
            return {
                "run_id": self.run_id,
                "timestamp": d.timestamp,
                "arm": d.chosen,
                "epsilon": d.epsilon_used,
                "probabilities": d.probabilities.as_dict(),
            }

    def stats(self) -> dict:
        with self._lock:
            if self.selector is None:
                raise LookupError("no run has been started")
            self.tick()
            st = self.selector.state
            return {
                "run_id": self.run_id,
                "kpi": self.config.kpi.kind.value,
                "epsilon": st.decision_log[-1].epsilon_used,
                "last_refresh": st.refresh_times[-1] if st.refresh_times else None,
                "arms": [
                    {**s.to_dict(), "qualified": sc.qualified}
                    for s, sc in zip(st.current_snapshots, st.current_scores)
                ],
            }

    def describe(self, run_id: Optional[str] = None) -> dict:
        with self._lock:
            run_id = run_id or self.run_id
            if run_id is None:
                raise KeyError(run_id)
            if run_id == self.run_id:
                st = self.selector.state
                return {
                    "run_id": run_id,
                    "status": "active" if self.active else "finished",
                    "decisions": len(st.decision_log),
                    "events": len(self.selector.buffer),
                    "config": self.config.to_dict(),
                }
            path = config_path(self.out, run_id)
            if not path.exists():
                raise KeyError(run_id)
            return {"run_id": run_id, "status": "stored", "config": json.loads(path.read_text())}

    def close(self) -> None:
        with self._lock:
            if self.store is not None:
                self.store.close()


def _field_errors(exc: RequestValidationError) -> list[dict]:
    return [
        {"field": ".".join(str(p) for p in err["loc"] if p != "body"), "message": err["msg"]}
        for err in exc.errors()
    ]


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="ams", version="1")
    app.state.runtime = runtime

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": _field_errors(exc)})

    def _no_run(exc: LookupError):
        return HTTPException(404, str(exc))

    @app.post("/v1/runs", status_code=201)
    def start_run(body: dict[str, Any]):
        try:
            config = build_config(body)
        except ConfigError as exc:
            raise HTTPException(400, str(exc))
        try:
            return runtime.start(config)
        except RuntimeError as exc:
            raise HTTPException(409, str(exc))
        except ConfigError as exc:
            raise HTTPException(400, str(exc))

    @app.get("/v1/runs/{run_id}")
    def get_run(run_id: str):
        try:
            return runtime.describe(run_id)
        except KeyError:
            raise HTTPException(404, f"unknown run {run_id!r}")

    @app.get("/v1/selection")
    def selection():
        try:
            return runtime.selection()
        except LookupError as exc:
            raise _no_run(exc)

    @app.post("/v1/events")
    def post_events(batch: EventBatch):
        try:
            return {"accepted": runtime.ingest(batch.events)}
        except LookupError as exc:
            raise _no_run(exc)
        except (OrderingError, ValueError) as exc:
            raise HTTPException(400, str(exc))

    @app.get("/v1/stats")
    def stats():
        try:
            return runtime.stats()
        except LookupError as exc:
            raise _no_run(exc)

    return app


class Ticker(threading.Thread):
    """Drives the selector on the wall clock between requests."""

    def __init__(self, runtime: Runtime, period: float = 1.0):
        super().__init__(daemon=True)
        self.runtime = runtime
        self.period = period
        self._halt = threading.Event()

    def run(self) -> None:
        while not self._halt.wait(self.period):
            try:
                self.runtime.tick()
            except Exception:  # keep ticking; the handlers surface errors
                log.exception("selector tick failed")

    def stop(self) -> None:
        self._halt.set()


def serve(runtime: Runtime, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    ticker = Ticker(runtime)
    ticker.start()
    try:
        uvicorn.run(create_app(runtime), host=host, port=port, log_level="info")
    finally:
        ticker.stop()
        runtime.close()
