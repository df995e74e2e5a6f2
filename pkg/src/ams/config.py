"""Run configuration: one YAML file plus command-line overrides.

Example::

    run_id: demo            # optional; derived from scenario and seed otherwise
    seed: 7
    scenario: lookback      # preset name or scenario file path; omit for live runs
    arms: [model7, model60] # live runs only
    out: runs
    policy:
      kind: decay_epsilon_greedy   # softmax | ucb | thompson | uniform | round_robin
      epsilon0: 0.3
      alpha_days: 30
    schedule:
      swap_minutes: 15
      kpi_refresh_hours: 24
      duration_days: 30            # live runs; simulations use the scenario's duration
    kpi:
      kind: ctr                    # ctr | cpc | cpa
      lookback_days: 30
      min_samples: 100
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from ams.bandit import PolicyConfig
from ams.errors import ConfigError
from ams.kpi import KpiSpec
from ams.selector import SIM_EPOCH, ScheduleConfig

_RUN_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass(frozen=True)
class RunConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    kpi: KpiSpec = field(default_factory=KpiSpec)
    seed: int = 0
    scenario: Optional[str] = None
    arms: tuple[str, ...] = ()
    out: Path = Path("runs")
    run_id: Optional[str] = None
    start_time: int = SIM_EPOCH

    @property
    def live(self) -> bool:
        return self.scenario is None

    @property
    def resolved_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        stem = Path(self.scenario).stem if self.scenario else "live"
        return f"{stem}-seed{self.seed}"

    def to_dict(self) -> dict:
        return {
            "run_id": self.resolved_run_id,
            "seed": self.seed,
            "scenario": self.scenario,
            "arms": list(self.arms),
            "out": str(self.out),
            "start_time": self.start_time,
            "policy": {k: (v.value if hasattr(v, "value") else v) for k, v in dataclasses.asdict(self.policy).items()},
            "schedule": {
                "swap_minutes": self.schedule.swap_interval / 60,
                "kpi_refresh_hours": self.schedule.kpi_refresh_interval / 3600,
                "duration_days": self.schedule.run_duration / 86400,
            },
            "kpi": {"kind": self.kpi.kind.value, "lookback_days": self.kpi.lookback_days, "min_samples": self.kpi.min_samples},
        }


def _section(data: dict, name: str) -> dict:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    return dict(value)


def _seconds(value: Any, unit: int, name: str) -> int:
    try:
        seconds = float(value) * unit
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if seconds != round(seconds):
        raise ConfigError(f"{name} must be a whole number of seconds")
    return int(round(seconds))


def build_config(data: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Validate a config mapping; ``overrides`` (flat, flag-named keys) win.

    Nothing is touched on disk here, so an invalid config has no side effects.
    """
    data = dict(data or {})
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {"run_id", "seed", "scenario", "arms", "out", "start_time", "policy", "schedule", "kpi"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    policy = _section(data, "policy")
    schedule = _section(data, "schedule")
    kpi = _section(data, "kpi")
    top = {k: data[k] for k in ("run_id", "seed", "scenario", "arms", "out", "start_time") if k in data}

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "policy":
            policy["kind"] = value
        elif key in ("epsilon0", "alpha_days", "temperature", "ucb_c", "prior_a", "prior_b"):
            policy[key] = value
        elif key == "swap_minutes":
            schedule["swap_minutes"] = value
        elif key == "duration_days":
            schedule["duration_days"] = value
        elif key == "kpi":
            kpi["kind"] = value
        elif key in ("lookback_days", "min_samples"):
            kpi[key] = value
        elif key in ("seed", "scenario", "out", "run_id", "arms"):
            top[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")

    try:
        policy_cfg = PolicyConfig(**policy)
    except TypeError as exc:
        raise ConfigError(f"policy: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"policy: {exc}") from None

    sched_known = {"swap_minutes", "kpi_refresh_hours", "duration_days"}
    if set(schedule) - sched_known:
        raise ConfigError(f"unknown schedule keys: {sorted(set(schedule) - sched_known)}")
    schedule_cfg = ScheduleConfig(
        swap_interval=_seconds(schedule.get("swap_minutes", 15), 60, "swap_minutes"),
        kpi_refresh_interval=_seconds(schedule.get("kpi_refresh_hours", 24), 3600, "kpi_refresh_hours"),
        run_duration=_seconds(schedule.get("duration_days", 30), 86400, "duration_days"),
    )
    try:
        kpi_cfg = KpiSpec(**kpi)
    except TypeError as exc:
        raise ConfigError(f"kpi: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"kpi: {exc}") from None

    run_id = top.get("run_id")
    if run_id is not None and not _RUN_ID.match(str(run_id)):
        raise ConfigError(f"run_id {run_id!r} must be a plain file-name stem")
    arms = top.get("arms") or ()
    if not isinstance(arms, (list, tuple)) or any(not isinstance(a, str) or not a for a in arms):
        raise ConfigError("arms must be a list of non-empty strings")
    if len(set(arms)) != len(arms):
        raise ConfigError("arm ids must be unique")
    scenario = top.get("scenario")
    if scenario is None and not arms:
        raise ConfigError("config needs either a scenario or a list of arms")
    try:
        seed = int(top.get("seed", 0))
        start_time = int(top.get("start_time", SIM_EPOCH))
    except (TypeError, ValueError):
        raise ConfigError("seed and start_time must be integers") from None
    return RunConfig(
        policy=policy_cfg,
        schedule=schedule_cfg,
        kpi=kpi_cfg,
        seed=seed,
        scenario=None if scenario is None else str(scenario),
        arms=tuple(arms),
        out=Path(top.get("out", "runs")),
        run_id=None if run_id is None else str(run_id),
        start_time=start_time,
    )


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
    return build_config(data, overrides)
