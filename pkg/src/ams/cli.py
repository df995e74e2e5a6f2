"""Command line entry point: ``ams simulate | replay | report | serve``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ams.bandit import PolicyKind
from ams.config import RunConfig, load_config
from ams.errors import ConfigError, LedgerError, LogParseError, SchemaVersionError
from ams.kpi import AttributionLedger, KpiKind, KpiSpec, attribute_events, snapshot_attributed
from ams.report import write_report
from ams.sim import load_scenario, run_scenario
from ams.store import EventStore, decision_arms, decisions_path, events_path, load_run, replay

log = logging.getLogger("ams")

EXIT_CONFIG = 2
EXIT_DATA = 1


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run config; flags override its values")
    p.add_argument("--scenario", help="preset name (lookback, features) or scenario file")
    p.add_argument("--policy", choices=[k.value for k in PolicyKind])
    p.add_argument("--epsilon0", type=float)
    p.add_argument("--alpha-days", type=float)
    p.add_argument("--swap-minutes", type=float)
    p.add_argument("--kpi", choices=[k.value for k in KpiKind])
    p.add_argument("--lookback-days", type=float)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory (default: runs)")
    p.add_argument("--run-id")


def _log_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--logs", type=Path, required=True, help="directory holding the run's log files")
    p.add_argument("--run-id", required=True)
    p.add_argument("--kpi", choices=[k.value for k in KpiKind], default="ctr")
    p.add_argument("--lookback-days", type=float, default=30.0)
    p.add_argument("--min-samples", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ams", description="Adaptive model selection for bidding campaigns.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write logs plus a daily CSV report")
    _run_flags(p)

    p = sub.add_parser("replay", help="rebuild the daily CSV report from stored logs")
    _log_flags(p)
    p.add_argument("--output", type=Path, help="report path (default: <logs>/<run_id>.replay.csv)")

    p = sub.add_parser("report", help="per-arm KPI snapshot at the end of a stored run")
    _log_flags(p)

    p = sub.add_parser("serve", help="run the HTTP selection service")
    _run_flags(p)
    p.add_argument("--arms", nargs="+", help="arm ids for a live run started at launch")
    p.add_argument("--resume", metavar="RUN_ID", help="rebuild a stored run from its logs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "scenario": args.scenario,
        "policy": args.policy,
        "epsilon0": args.epsilon0,
        "alpha_days": args.alpha_days,
        "swap_minutes": args.swap_minutes,
        "kpi": args.kpi,
        "lookback_days": args.lookback_days,
        "min_samples": args.min_samples,
        "seed": args.seed,
        "out": args.out,
        "run_id": args.run_id,
        "arms": getattr(args, "arms", None),
    }
    return load_config(args.config, overrides)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config(args)
    if config.scenario is None:
        raise ConfigError("simulate needs --scenario (or 'scenario' in the config file)")
    scenario = load_scenario(config.scenario)
    run_id = config.resolved_run_id
    result = run_scenario(scenario, config.policy, config.schedule, config.seed, config.kpi, config.start_time)

    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    # a rerun replaces the previous logs instead of appending to them
    for path in (events_path(out, run_id), decisions_path(out, run_id)):
        path.unlink(missing_ok=True)
    with EventStore(out, run_id) as store:
        store.append_events(result.events)
        store.append_decisions(result.decisions)
        store.flush(fsync=True)
    report = write_report(result.daily, out / f"{run_id}.report.csv")
    print(f"run {run_id}: {len(result.decisions)} decisions, {len(result.events)} events, "
          f"{result.total_clicks} clicks, expected-click regret {result.regret:.1f}")
    print(f"report: {report}")
    return 0


def _load(args: argparse.Namespace):
    for path in (events_path(args.logs, args.run_id), decisions_path(args.logs, args.run_id)):
        if not path.is_file():
            raise FileNotFoundError(f"log file not found: {path}")
    return load_run(args.logs, args.run_id)


def _spec(args: argparse.Namespace) -> KpiSpec:
    try:
        return KpiSpec(KpiKind(args.kpi), args.lookback_days, args.min_samples)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_replay(args: argparse.Namespace) -> int:
    spec = _spec(args)
    events, decisions = _load(args)
    rows = replay(events, decisions, spec)
    output = args.output or args.logs / f"{args.run_id}.replay.csv"
    write_report(rows, output)
    print(f"report: {output} ({len(rows)} rows)")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    spec = _spec(args)
    events, decisions = _load(args)
    arms = decision_arms(decisions)
    if not arms:
        print("no decisions logged")
        return 0
    ends = [decisions[-1].timestamp + 1]
    if len(events):
        ends.append(int(events.timestamp[-1]) + 1)
    now = max(ends)
    attributed = attribute_events(events, AttributionLedger.from_decisions(decisions), arms)
    for snap in snapshot_attributed(attributed, spec, arms, now):
        print(json.dumps(snap.to_dict()))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from ams.service import Runtime, serve

    out = args.out or Path("runs")
    config: Optional[RunConfig] = None
    if args.config or args.arms:
        config = _config(args)
        out = config.out
    runtime = Runtime(out)
    if args.resume:
        try:
            runtime.resume(args.resume)
        except KeyError:
            raise ConfigError(f"no stored run {args.resume!r} in {out}") from None
    elif config is not None:
        runtime.start(config)
    serve(runtime, args.host, args.port)
    return 0


COMMANDS = {"simulate": cmd_simulate, "replay": cmd_replay, "report": cmd_report, "serve": cmd_serve}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ams: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LogParseError as exc:
        print(f"ams: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SchemaVersionError, LedgerError, FileNotFoundError) as exc:
        print(f"ams: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
