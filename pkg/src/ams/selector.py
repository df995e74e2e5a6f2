"""Model selector loop.

The loop swaps the active arm on a fixed cadence (15 minutes by default)
and refreshes KPI scores on a slower one (daily). Refreshes are checked
at swap boundaries only, so a refresh lands on the first swap at or after
each refresh boundary. Between refreshes the allocation uses stale scores
with a fresh exploration rate.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from ams.bandit import (
    ArmScore,
    Direction,
    PolicyConfig,
    PolicyKind,
    ProbabilityVector,
    SelectionDecision,
    activation_probabilities,
    beta_posterior,
    epsilon_at,
    select_arm,
    softmax_probabilities,
    thompson_draw,
    ucb_choice,
)
from ams.errors import ClockError, ConfigError
from ams.events import UNATTRIBUTED, EventTable
from ams.kpi import (
    SECONDS_PER_DAY,
    ArmKpiSnapshot,
    AttributionLedger,
    EventBuffer,
    KpiSpec,
    attribute_events,
    scores_from_snapshots,
    snapshot_attributed,
)

log = logging.getLogger(__name__)

# 2020-01-01T00:00:00Z; simulated runs start here unless told otherwise
SIM_EPOCH = 1577836800


@dataclass(frozen=True)
class ScheduleConfig:
    swap_interval: int = 15 * 60
    kpi_refresh_interval: int = SECONDS_PER_DAY
    run_duration: int = 30 * SECONDS_PER_DAY

    def __post_init__(self):
        for name in ("swap_interval", "kpi_refresh_interval", "run_duration"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigError(f"{name} must be a positive whole number of seconds, got {value}")
            object.__setattr__(self, name, int(value))
        if self.swap_interval > self.kpi_refresh_interval:
            raise ConfigError("swap_interval must not exceed kpi_refresh_interval")


class Clock(Protocol):
    def now(self) -> int: ...


class SimulatedClock:
    def __init__(self, start: int):
        self._now = int(start)

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        self._now += int(seconds)
        return self._now

    def set(self, t: int) -> None:
        # no monotonicity check here; the selector detects regressions
        self._now = int(t)


class WallClock:
    def now(self) -> int:
        return int(time.time())


@dataclass
class LoopState:
    start_time: int
    now: int
    elapsed_days: float = 0.0
    current_arm: Optional[str] = None
    current_scores: list[ArmScore] = field(default_factory=list)
    current_snapshots: list[ArmKpiSnapshot] = field(default_factory=list)
    decision_log: list[SelectionDecision] = field(default_factory=list)
    refresh_times: list[int] = field(default_factory=list)
    pulls: dict[str, int] = field(default_factory=dict)


def policy_probabilities(
    policy: PolicyConfig,
    arms: Sequence[str],
    scores: Sequence[ArmScore],
    snapshots: Sequence[ArmKpiSnapshot],
    elapsed_days: float,
    pulls: dict[str, int],
    n_decisions: int,
    rng: np.random.Generator,
) -> tuple[ProbabilityVector, float]:
    """Allocation for the next swap and the exploration rate it used.

    Policies that pick an arm directly (UCB, Thompson, round-robin) return a
    one-hot vector so every decision still goes through ``select_arm``.
    """
    kind = policy.kind
    if kind is PolicyKind.DECAY_EPSILON_GREEDY:
        eps = epsilon_at(elapsed_days, policy.epsilon0, policy.alpha_days)
        return activation_probabilities(scores, eps), eps
    if kind is PolicyKind.UNIFORM:
        return ProbabilityVector.uniform(arms), 1.0
    if kind is PolicyKind.ROUND_ROBIN:
        return ProbabilityVector.one_hot(arms, arms[n_decisions % len(arms)]), 0.0
    if kind is PolicyKind.SOFTMAX:
        if all(s.qualified for s in scores):
            return softmax_probabilities(scores, policy.temperature), 0.0
        return ProbabilityVector.uniform(arms), 1.0
    if kind is PolicyKind.UCB:
        sign = 1.0 if scores[0].direction is Direction.MAXIMIZE else -1.0
        means = [sign * s.kpi_value if s.kpi_value is not None else 0.0 for s in scores]
        chosen = ucb_choice(arms, means, [pulls.get(a, 0) for a in arms], policy.ucb_c)
        return ProbabilityVector.one_hot(arms, chosen), 0.0
    if kind is PolicyKind.THOMPSON:
        by_arm = {s.arm: s for s in snapshots}
        posteriors = []
        for a in arms:
            snap = by_arm.get(a)
            clicks, imps = (snap.clicks, snap.impressions) if snap else (0, 0)
            posteriors.append((a, *beta_posterior(clicks, imps, policy.prior_a, policy.prior_b)))
        return ProbabilityVector.one_hot(arms, thompson_draw(posteriors, rng)), 0.0
    raise ConfigError(f"unsupported policy {kind}")


class Selector:
    """Owns the decision state for one campaign run."""

    def __init__(
        self,
        arms: Sequence[str],
        policy: PolicyConfig,
        schedule: ScheduleConfig,
        kpi: KpiSpec,
        rng: np.random.Generator,
        start_time: int,
    ):
        arms = tuple(arms)
        if not arms:
            raise ConfigError("at least one arm must be registered")
        if len(set(arms)) != len(arms) or any(not a for a in arms):
            raise ConfigError(f"arm ids must be unique and non-empty: {arms}")
        self.arms = arms
        self.policy = policy
        self.schedule = schedule
        self.kpi = kpi
        self.rng = rng
        self.buffer = EventBuffer(arms)
        self.state = LoopState(start_time=int(start_time), now=int(start_time), pulls={a: 0 for a in arms})
        self.state.current_snapshots = snapshot_attributed(EventTable.empty(arms), kpi, arms, int(start_time))
        self.state.current_scores = scores_from_snapshots(self.state.current_snapshots, kpi)
        self._next_swap = int(start_time)
        self._next_refresh = int(start_time) + schedule.kpi_refresh_interval
        self._starts: list[int] = []
        self._codes: list[int] = []

    def tick(self, clock: Clock) -> Optional[SelectionDecision]:
        now = int(clock.now())
        st = self.state
        if now < st.now:
            raise ClockError(f"clock moved backwards from {st.now} to {now}")
        st.now = now
        st.elapsed_days = (now - st.start_time) / SECONDS_PER_DAY
        if now < self._next_swap:
            return None
        if now >= self._next_refresh:
            self.refresh(now)
            while self._next_refresh <= now:
                self._next_refresh += self.schedule.kpi_refresh_interval
        decision = self._decide(now)
        while self._next_swap <= now:
            self._next_swap += self.schedule.swap_interval
        return decision

    def refresh(self, now: int) -> None:
        st = self.state
        st.current_snapshots = self.buffer.snapshot(self.kpi, now)
        st.current_scores = scores_from_snapshots(st.current_snapshots, self.kpi)
        st.refresh_times.append(now)
        log.debug("kpi refresh at %d: %s", now, st.current_scores)

    def _decide(self, now: int) -> SelectionDecision:
        st = self.state
        probs, eps = policy_probabilities(
            self.policy, self.arms, st.current_scores, st.current_snapshots,
            st.elapsed_days, st.pulls, len(st.decision_log), self.rng,
        )
        decision = select_arm(probs, self.rng, timestamp=now, epsilon_used=eps)
        self.record(decision)
        return decision

    def record(self, decision: SelectionDecision) -> None:
        """Append a decision made (or replayed) at ``decision.timestamp``."""
        st = self.state
        if st.decision_log and decision.timestamp <= st.decision_log[-1].timestamp:
            raise ClockError("decision timestamps must strictly increase")
        st.decision_log.append(decision)
        st.current_arm = decision.chosen
        st.pulls[decision.chosen] += 1
        self._starts.append(decision.timestamp)
        self._codes.append(self.arms.index(decision.chosen))

    def attribute(self, events: EventTable) -> EventTable:
        """Stamp events with the arm active at their timestamps."""
        events = events.recode(self.arms) if events.arms else events.with_arms(events.arm, self.arms)
        if not self._starts:
            return events.with_arms(np.full(len(events), UNATTRIBUTED, np.int32), self.arms)
        if len(events) and events.timestamp.min() >= self._starts[-1]:
            return events.with_arms(np.full(len(events), self._codes[-1], np.int32), self.arms)
        idx = np.searchsorted(np.asarray(self._starts), events.timestamp, side="right") - 1
        codes = np.asarray(self._codes + [UNATTRIBUTED], dtype=np.int32)
        return events.with_arms(codes[idx], self.arms)

    def restore(self, decisions: Sequence[SelectionDecision], events: EventTable) -> None:
        """Rebuild state from persisted logs.

        Refreshes are not logged, so their times are recomputed from the
        decisions: one refresh at the first decision on or after each
        refresh boundary, exactly as :meth:`tick` would have made them.
        """
        if self.state.decision_log:
            raise ClockError("restore needs a fresh selector")
        R = self.schedule.kpi_refresh_interval
        refreshes = []
        next_refresh = self.state.start_time + R
        for d in decisions:
            self.record(d)
            if d.timestamp >= next_refresh:
                refreshes.append(d.timestamp)
                while next_refresh <= d.timestamp:
                    next_refresh += R
        if len(events):
            self.buffer.append(attribute_events(events, self.ledger(), self.arms))
        for t in refreshes[-1:]:
            self.refresh(t)
        st = self.state
        st.refresh_times = refreshes
        last = decisions[-1].timestamp if decisions else st.start_time - 1
        st.now = max(st.now, last, self.buffer.last_timestamp or last)
        st.elapsed_days = (st.now - st.start_time) / SECONDS_PER_DAY
        self._next_refresh = next_refresh
        S = self.schedule.swap_interval
        self._next_swap = st.start_time + ((last - st.start_time) // S + 1) * S

    def ingest(self, events: EventTable) -> EventTable:
        attributed = self.attribute(events)
        self.buffer.append(attributed)
        return attributed

    def ledger(self, end: Optional[int] = None) -> AttributionLedger:
        return AttributionLedger.from_decisions(self.state.decision_log, end)

    @property
    def next_swap(self) -> int:
        return self._next_swap

    @property
    def next_refresh(self) -> int:
        return self._next_refresh


class EventSource(Protocol):
    arms: Sequence[str]

    def generate(self, arm: str, start: int, end: int, rng: np.random.Generator) -> EventTable: ...


@dataclass
class RunResult:
    decisions: list[SelectionDecision]
    events: EventTable
    state: LoopState
    start_time: int
    end_time: int


def split_rng(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (policy, environment) streams derived from one seed."""
    policy_ss, env_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(policy_ss), np.random.default_rng(env_ss)


def run(
    source: EventSource,
    policy: PolicyConfig,
    schedule: ScheduleConfig,
    seed: int,
    kpi: Optional[KpiSpec] = None,
    start_time: int = SIM_EPOCH,
) -> RunResult:
    """Drive a selector against ``source`` on a simulated clock."""
    arms = tuple(source.arms)
    if not arms:
        raise ConfigError("at least one arm must be registered")
    kpi = kpi or KpiSpec()
    policy_rng, env_rng = split_rng(seed)
    selector = Selector(arms, policy, schedule, kpi, policy_rng, start_time)
    clock = SimulatedClock(start_time)
    end = start_time + schedule.run_duration
    selector.tick(clock)
    t = start_time
    while t < end:
        nxt = min(t + schedule.swap_interval, end)
        selector.ingest(source.generate(selector.state.current_arm, t, nxt, env_rng))
        clock.set(nxt)
        selector.tick(clock)
        t = nxt
    return RunResult(
        decisions=list(selector.state.decision_log),
        events=selector.buffer.table(),
        state=selector.state,
        start_time=start_time,
        end_time=end,
    )


def decision_count(schedule: ScheduleConfig) -> int:
    return math.floor(schedule.run_duration / schedule.swap_interval) + 1
