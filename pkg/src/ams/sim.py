"""Synthetic RTB campaign.

Each arm is a click process whose true CTR follows a piecewise-linear curve
over campaign days. The simulator stands in for the trained models and the
live exchange: it turns "arm X was active during [start, end)" into
impression, click and conversion events.

Scenario files are YAML::

    name: lookback
    duration_days: 45
    impressions_per_interval: 520   # per swap interval; a mean when volume is poisson
    volume: fixed                   # fixed | poisson
    cost_per_impression_micros: 2000
    conversion_rate_per_click: 0.05
    arms:
      model7: [[0, 0.010]]                           # (day, ctr) breakpoints
      model60: [[0, 0.007], [7, 0.010], [9, 0.020]]

CTR is interpolated linearly between breakpoints and held constant beyond
the first and last one.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from ams.bandit import PolicyConfig, PolicyKind, SelectionDecision
from ams.errors import ConfigError, InvalidArgument
from ams.events import EventKind, EventTable
from ams.kpi import SECONDS_PER_DAY, KpiSpec
from ams.report import DailyRow, daily_series
from ams.selector import SIM_EPOCH, LoopState, ScheduleConfig, run


@dataclass(frozen=True)
class CtrCurve:
    days: tuple[float, ...]
    ctrs: tuple[float, ...]

    def __post_init__(self):
        days = tuple(float(d) for d in self.days)
        ctrs = tuple(float(c) for c in self.ctrs)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "ctrs", ctrs)
        if not days or len(days) != len(ctrs):
            raise ConfigError("a CTR curve needs matching, non-empty day and ctr lists")
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ConfigError(f"curve breakpoints must have strictly increasing days: {days}")
        if any(not (0.0 <= c <= 1.0) for c in ctrs):
            raise ConfigError(f"CTR values must lie in [0, 1]: {ctrs}")

    @classmethod
    def constant(cls, ctr: float) -> CtrCurve:
        return cls((0.0,), (ctr,))

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]]) -> CtrCurve:
        try:
            days, ctrs = zip(*[(p[0], p[1]) for p in points])
        except (TypeError, IndexError, ValueError):
            raise ConfigError(f"curve must be a list of [day, ctr] pairs, got {points!r}") from None
        return cls(days, ctrs)

    def points(self) -> list[list[float]]:
        return [[d, c] for d, c in zip(self.days, self.ctrs)]

    def __call__(self, day):
        return np.interp(day, self.days, self.ctrs)


@dataclass(frozen=True)
class SimScenario:
    name: str
    arms: tuple[tuple[str, CtrCurve], ...]
    impressions_per_interval: float = 520
    volume: str = "fixed"
    cost_per_impression_micros: int = 2000
    duration_days: float = 30.0
    conversion_rate_per_click: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple((str(a), c) for a, c in self.arms))
        ids = self.arm_ids
        if not ids:
            raise ConfigError("a scenario needs at least one arm")
        if len(set(ids)) != len(ids) or any(not a for a in ids):
            raise ConfigError(f"arm ids must be unique and non-empty: {ids}")
        if self.volume not in ("fixed", "poisson"):
            raise ConfigError(f"volume must be 'fixed' or 'poisson', got {self.volume!r}")
        if self.impressions_per_interval < 0 or not math.isfinite(self.impressions_per_interval):
            raise ConfigError("impressions_per_interval must be non-negative")
        if self.volume == "fixed" and int(self.impressions_per_interval) != self.impressions_per_interval:
            raise ConfigError("fixed volume needs a whole number of impressions per interval")
        if self.cost_per_impression_micros < 0 or int(self.cost_per_impression_micros) != self.cost_per_impression_micros:
            raise ConfigError("cost_per_impression_micros must be a non-negative integer")
        if not (self.duration_days > 0 and math.isfinite(self.duration_days)):
            raise ConfigError("duration_days must be positive")
        if not (0.0 <= self.conversion_rate_per_click <= 1.0):
            raise ConfigError("conversion_rate_per_click must lie in [0, 1]")

    @property
    def arm_ids(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.arms)

    @property
    def duration_seconds(self) -> int:
        return round(self.duration_days * SECONDS_PER_DAY)

    def curve(self, arm: str) -> CtrCurve:
        for a, c in self.arms:
            if a == arm:
                return c
        raise InvalidArgument(f"unknown arm {arm!r} in scenario {self.name!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "duration_days": self.duration_days,
            "impressions_per_interval": self.impressions_per_interval,
            "volume": self.volume,
            "cost_per_impression_micros": self.cost_per_impression_micros,
            "conversion_rate_per_click": self.conversion_rate_per_click,
            "arms": {a: c.points() for a, c in self.arms},
        }

    @classmethod
    def from_dict(cls, data: dict) -> SimScenario:
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        arms = data.get("arms")
        if not isinstance(arms, dict) or not arms:
            raise ConfigError("scenario needs an 'arms' mapping of arm id to curve breakpoints")
        kwargs = {k: v for k, v in data.items() if k != "arms"}
        kwargs.setdefault("name", "scenario")
        try:
            return cls(arms=tuple((a, CtrCurve.from_points(p)) for a, p in arms.items()), **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


PRESETS = {
    # the long-lookback model starts worse, overtakes at day 7 and keeps improving
    "lookback": SimScenario(
        name="lookback",
        arms=(
            ("model7", CtrCurve.constant(0.010)),
            ("model60", CtrCurve((0, 7, 9), (0.007, 0.010, 0.020))),
        ),
        impressions_per_interval=520,
        cost_per_impression_micros=2000,
        duration_days=45,
        conversion_rate_per_click=0.05,
    ),
    # the control model is better online for the whole campaign
    "features": SimScenario(
        name="features",
        arms=(
            ("modelControl", CtrCurve((0, 15, 30), (0.012, 0.011, 0.0125))),
            ("modelTest", CtrCurve((0, 15, 30), (0.0085, 0.009, 0.008))),
        ),
        impressions_per_interval=520,
        cost_per_impression_micros=2000,
        duration_days=30,
        conversion_rate_per_click=0.05,
    ),
}


def load_scenario(source: Union[str, Path]) -> SimScenario:
    """Load a preset by name or a scenario file by path."""
    if isinstance(source, str) and source in PRESETS:
        return PRESETS[source]
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse scenario {path}: {exc}") from None
    return SimScenario.from_dict(data)


def dump_scenario(scenario: SimScenario, path: Path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario.to_dict(), sort_keys=False), encoding="utf-8")


_KINDS = np.array([EventKind.IMPRESSION, EventKind.CLICK, EventKind.CONVERSION], dtype=np.int8)


def step(
    scenario: SimScenario,
    active: str,
    interval: tuple[int, int],
    rng: np.random.Generator,
    start_time: int = SIM_EPOCH,
    swap_interval: int = 15 * 60,
) -> EventTable:
    """Events for one activation interval of ``active``.

    Draw order is fixed: impression count (Poisson only), impression
    timestamps, one uniform per impression for clicks, one uniform per click
    for conversions. Clicks and conversions share their impression's
    timestamp. A partial interval gets a proportional share of the volume.
    """
    start, end = interval
    if end <= start:
        raise InvalidArgument(f"empty interval [{start}, {end})")
    if start < start_time or end > start_time + scenario.duration_seconds:
        raise InvalidArgument("interval falls outside the scenario duration")
    curve = scenario.curve(active)
    arms = scenario.arm_ids
    code = arms.index(active)

    volume = scenario.impressions_per_interval * (end - start) / swap_interval
    n = int(rng.poisson(volume)) if scenario.volume == "poisson" else round(volume)
    imp_ts = np.sort(rng.integers(start, end, size=n, dtype=np.int64))
    mid_day = ((start + end) / 2 - start_time) / SECONDS_PER_DAY
    ctr = float(curve(mid_day))
    click_ts = imp_ts[rng.random(n) < ctr]
    conv_ts = click_ts[rng.random(len(click_ts)) < scenario.conversion_rate_per_click]

    ts = np.concatenate([imp_ts, click_ts, conv_ts])
    kind = np.repeat(_KINDS, [n, len(click_ts), len(conv_ts)])
    order = np.lexsort((kind, ts))
    ts, kind = ts[order], kind[order]
    cost = np.where(kind == EventKind.IMPRESSION, scenario.cost_per_impression_micros, 0).astype(np.int64)
    return EventTable(ts, kind, cost, np.full(len(ts), code, np.int32), arms, is_sorted=True)


class CampaignSim:
    """Event source wrapping :func:`step` for the selector loop."""

    def __init__(self, scenario: SimScenario, start_time: int = SIM_EPOCH, swap_interval: int = 15 * 60):
        self.scenario = scenario
        self.arms = scenario.arm_ids
        self.start_time = start_time
        self.swap_interval = swap_interval

    def generate(self, arm: str, start: int, end: int, rng: np.random.Generator) -> EventTable:
        return step(self.scenario, arm, (start, end), rng, self.start_time, self.swap_interval)


@dataclass
class SimResult:
    scenario: str
    arms: tuple[str, ...]
    events: EventTable
    decisions: list[SelectionDecision]
    daily: list[DailyRow]
    total_clicks: int
    regret: float
    start_time: int
    end_time: int
    state: Optional[LoopState] = None


def _schedule_for(scenario: SimScenario, schedule: Optional[ScheduleConfig]) -> ScheduleConfig:
    # the scenario owns the run length
    schedule = schedule or ScheduleConfig()
    return dataclasses.replace(schedule, run_duration=scenario.duration_seconds)


def run_scenario(
    scenario: SimScenario,
    policy: PolicyConfig,
    schedule: Optional[ScheduleConfig] = None,
    seed: int = 0,
    kpi: Optional[KpiSpec] = None,
    start_time: int = SIM_EPOCH,
) -> SimResult:
    kpi = kpi or KpiSpec()
    schedule = _schedule_for(scenario, schedule)
    source = CampaignSim(scenario, start_time, schedule.swap_interval)
    out = run(source, policy, schedule, seed, kpi, start_time)
    result = SimResult(
        scenario=scenario.name,
        arms=scenario.arm_ids,
        events=out.events,
        decisions=out.decisions,
        daily=daily_series(out.events, out.decisions, scenario.arm_ids, kpi.lookback_days),
        total_clicks=int(np.count_nonzero(out.events.kind == EventKind.CLICK)),
        regret=0.0,
        start_time=out.start_time,
        end_time=out.end_time,
        state=out.state,
    )
    result.regret = regret(result, scenario)
    return result


def ab_baseline(
    scenario: SimScenario,
    schedule: Optional[ScheduleConfig] = None,
    seed: int = 0,
    kpi: Optional[KpiSpec] = None,
    start_time: int = SIM_EPOCH,
) -> SimResult:
    """Equal split: arms take turns, one swap interval each."""
    return run_scenario(scenario, PolicyConfig(kind=PolicyKind.ROUND_ROBIN), schedule, seed, kpi, start_time)


def regret(result: SimResult, scenario: SimScenario) -> float:
    """Expected clicks forgone against always running the pointwise-best arm.

    Uses true curve values at each interval's midpoint and the impressions
    actually bought in that interval.
    """
    if tuple(result.arms) != scenario.arm_ids or result.end_time - result.start_time != scenario.duration_seconds:
        raise InvalidArgument(f"result does not come from scenario {scenario.name!r}")
    if not result.decisions:
        return 0.0
    starts = np.array([d.timestamp for d in result.decisions], dtype=np.int64)
    ends = np.append(starts[1:], result.end_time)
    keep = starts < result.end_time
    starts, ends = starts[keep], np.minimum(ends[keep], result.end_time)
    chosen = [d.chosen for d, k in zip(result.decisions, keep) if k]

    ev = result.events
    imp_ts = np.sort(ev.timestamp[ev.kind == EventKind.IMPRESSION])
    volume = np.searchsorted(imp_ts, ends, side="left") - np.searchsorted(imp_ts, starts, side="left")
    mid_day = ((starts + ends) / 2 - result.start_time) / SECONDS_PER_DAY
    curves = {a: scenario.curve(a)(mid_day) for a in scenario.arm_ids}
    best = np.max(np.vstack(list(curves.values())), axis=0)
    active = np.array([curves[a][i] for i, a in enumerate(chosen)])
    return float(np.sum(volume * (best - active)))
