"""Acceptance criteria, one test per criterion.

Each check returns ``(passed, detail)``; the verdicts are also printed as one
line per criterion in the pytest terminal summary (see conftest.py), or
directly when this file is run as a script.
"""

import functools
import math
import time
from fractions import Fraction

import numpy as np

import oracles
from ams.bandit import (
    ArmScore,
    PolicyConfig,
    PolicyKind,
    ProbabilityVector,
    activation_probabilities,
    epsilon_at,
    select_arm,
    softmax_probabilities,
    thompson_draw,
)
from ams.events import Event, EventKind, EventTable
from ams.kpi import AttributionLedger, KpiKind, KpiSpec, attribute_events, snapshot_attributed
from ams.report import report_csv, series_by_arm
from ams.selector import SIM_EPOCH, ScheduleConfig, run
from ams.sim import PRESETS, CampaignSim, ab_baseline, run_scenario
from ams.store import EventStore, load_run, replay

DAY = 86400
RESULTS: dict[int, tuple[bool, str]] = {}


def record(n, passed, detail):
    RESULTS[n] = (bool(passed), detail)
    return bool(passed), detail


# 1. formula fidelity

def check_formulas():
    t_start = time.perf_counter()
    worst = worst_sum = 0.0
    cases = 0
    for eps0 in (Fraction(0), Fraction(1, 10), Fraction(3, 10), Fraction(1)):
        for alpha in (1, 30):
            for m in (1, 2, 5):
                for t in (Fraction(0), Fraction(alpha, 2), Fraction(alpha), Fraction(2 * alpha)):
                    # hand evaluation in exact rationals
                    eps = eps0 * max(Fraction(0), 1 - t / alpha)
                    p_best = (1 - eps) + eps / m
                    p_other = eps / m
                    got_eps = epsilon_at(float(t), float(eps0), alpha)
                    worst = max(worst, abs(got_eps - float(eps)))
                    scores = [ArmScore(f"m{i}", 0.01 + 0.001 * (i == 1), samples=500, qualified=True) for i in range(m)]
                    p = activation_probabilities(scores, got_eps)
                    best = 1 if m > 1 else 0
                    for i, prob in enumerate(p.probs):
                        want = p_best if i == best else p_other
                        worst = max(worst, abs(prob - float(want)))
                    worst_sum = max(worst_sum, abs(math.fsum(p.probs) - 1.0))
                    cases += 1
    elapsed = time.perf_counter() - t_start
    ok = worst <= 1e-12 and worst_sum <= 1e-12 and elapsed < 1.0
    return record(1, ok, f"{cases} grid points, max abs error {worst:.2e}, max |sum-1| {worst_sum:.2e}, {elapsed:.3f}s")


# 2. sampling correctness

def check_sampling():
    p = ProbabilityVector(("a", "b", "c", "d"), (0.85, 0.05, 0.05, 0.05))
    n = 100_000
    rng = np.random.default_rng(2024)
    draws = [select_arm(p, rng).chosen for _ in range(n)]
    freq = [draws.count(a) / n for a in p.arms]
    dev = max(abs(f - q) for f, q in zip(freq, p.probs))
    again = [select_arm(p, np.random.default_rng(2024)).chosen]
    rng2 = np.random.default_rng(2024)
    repeat = [select_arm(p, rng2).chosen for _ in range(1000)]
    reproducible = repeat == draws[:1000] and again == draws[:1]
    ok = dev <= 0.01 and reproducible
    return record(2, ok, f"frequencies {[round(f, 4) for f in freq]}, max deviation {dev:.4f}, reproducible={reproducible}")


# 3. attribution and KPI oracle

def check_oracle():
    t_start = time.perf_counter()
    arms = ("a", "b", "c")
    mismatches = checked = 0
    for seed in range(3):
        raw, intervals = oracles.random_log(100 + seed, n_events=1000, n_intervals=50)
        expected = oracles.attribute(raw, intervals)
        table = EventTable.from_events([Event(t, EventKind.parse(k), c) for t, k, c in raw])
        ledger = AttributionLedger([s for s, _, _ in intervals], [e for _, e, _ in intervals], [a for *_, a in intervals])
        got = attribute_events(table, ledger, arms)
        mismatches += [(e.timestamp, e.kind.label, e.cost_micros, e.arm) for e in got] != expected
        for kind in ("ctr", "cpc", "cpa"):
            spec = KpiSpec(KpiKind(kind), lookback_days=5)
            for now in (intervals[5][0], intervals[24][1], intervals[49][0] + 1, intervals[49][1] + DAY):
                for snap in snapshot_attributed(got, spec, arms, now):
                    counts = oracles.window_counts(expected, snap.arm, now, 5)
                    actual = (snap.impressions, snap.clicks, snap.conversions, snap.spend_micros)
                    mismatches += actual != counts or snap.kpi_value != oracles.kpi(kind, *counts)
                    checked += 1
    elapsed = time.perf_counter() - t_start
    ok = mismatches == 0 and elapsed < 1.0
    return record(3, ok, f"{checked} snapshots + 3 attributions vs full scan, {mismatches} mismatches, {elapsed:.3f}s")


# 4. cadence

def check_cadence():
    sched = ScheduleConfig(swap_interval=900, kpi_refresh_interval=DAY, run_duration=2 * DAY)
    policy = PolicyConfig(epsilon0=0.3, alpha_days=1)
    res = run(CampaignSim(PRESETS["features"], SIM_EPOCH, 900), policy, sched, seed=0)
    ts = np.array([d.timestamp for d in res.decisions]) - SIM_EPOCH
    per_day = [int(np.sum((ts >= k * DAY) & (ts < (k + 1) * DAY))) for k in range(2)]
    eps = [d.epsilon_used for d in res.decisions]
    monotone = all(b <= a for a, b in zip(eps, eps[1:]))
    zero_after = all(e == 0.0 for e, t in zip(eps, ts) if t >= DAY)
    ok = (per_day == [96, 96] and ts[0] == 0 and len(ts) == 193 and len(res.state.refresh_times) == 2
          and monotone and zero_after and eps[0] == 0.3)
    return record(4, ok, f"decisions per day {per_day} + t=0, total {len(ts)}, refreshes {len(res.state.refresh_times)}, "
                         f"epsilon non-increasing={monotone}, zero for t>=alpha={zero_after}")


# 5 to 7 share simulation runs

def greedy_run(preset, seed):
    return run_scenario(PRESETS[preset], PolicyConfig(epsilon0=0.3, alpha_days=30), seed=seed)


class Summary:
    # full results hold millions of events; keep only what the checks read
    def __init__(self, result):
        self.daily = result.daily
        self.regret = result.regret


@functools.lru_cache(maxsize=None)
def greedy(preset, seed):
    return Summary(greedy_run(preset, seed))


@functools.lru_cache(maxsize=None)
def baseline(preset, seed):
    return Summary(ab_baseline(PRESETS[preset], seed=seed))


def shares(result, arm):
    imps = series_by_arm(result.daily, "cumulative_impressions")
    daily = {a: np.diff([0] + v) for a, v in imps.items()}
    total = sum(daily.values())
    return daily[arm] / total


def check_lookback():
    t_start = time.perf_counter()
    runs = [greedy("lookback", s) for s in range(20)]
    prob_b = np.median([series_by_arm(r.daily, "activation_probability")["model60"] for r in runs], axis=0)
    share_b = np.median([shares(r, "model60") for r in runs], axis=0)
    elapsed = time.perf_counter() - t_start
    late = share_b[14:]
    ok = prob_b[29] > 0.8 and np.all(late > 0.5) and elapsed < 60
    return record(5, ok, f"median P(model60) on day 30 = {prob_b[29]:.3f}; min median daily share of model60 from day 14 = "
                         f"{late.min():.3f} (needs > 0.5); 20 seeds in {elapsed:.1f}s")


def check_features():
    runs = [greedy("features", s) for s in range(20)]
    cum = [series_by_arm(r.daily, "cumulative_impressions") for r in runs]
    lead = np.median([np.array(c["modelControl"]) - np.array(c["modelTest"]) for c in cum], axis=0)
    final = np.median([c["modelControl"][-1] / (c["modelControl"][-1] + c["modelTest"][-1]) for c in cum])
    last_day = np.median([shares(r, "modelControl")[-1] for r in runs])
    ok = np.all(lead[2:] > 0) and final > 0.85
    return record(6, ok, f"median cumulative lead of modelControl > 0 from day 3: {bool(np.all(lead[2:] > 0))}; "
                         f"median cumulative share {final:.3f}, last-day share {last_day:.3f}")


def check_ab():
    t_start = time.perf_counter()
    pairs = [(greedy("features", s).regret, baseline("features", s).regret) for s in range(50)]
    g, b = np.array(pairs).T
    wins = float(np.mean(g < b))
    reduction = 1 - g.mean() / b.mean()
    ok = wins >= 0.8 and reduction >= 0.25
    return record(7, ok, f"epsilon-greedy lower regret in {wins:.0%} of 50 pairs; mean regret {g.mean():.1f} vs "
                         f"{b.mean():.1f} (-{reduction:.0%}); {time.perf_counter() - t_start:.1f}s")


# 8. audit property

def check_audit(tmp_path):
    identical = []
    for preset, seed in (("features", 0), ("lookback", 1)):
        res = greedy_run(preset, seed)
        with EventStore(tmp_path, f"{preset}-{seed}") as store:
            store.append_events(res.events)
            store.append_decisions(res.decisions)
        events, decisions = load_run(tmp_path, f"{preset}-{seed}")
        identical.append(report_csv(replay(events, decisions)).encode() == report_csv(res.daily).encode())

    from fastapi.testclient import TestClient

    from ams.selector import SimulatedClock
    from ams.service import Runtime, create_app

    clock = SimulatedClock(SIM_EPOCH)
    rt = Runtime(tmp_path / "svc", clock)
    client = TestClient(create_app(rt))
    client.post("/v1/runs", json={"run_id": "audit", "arms": ["m1", "m2"], "seed": 3, "kpi": {"min_samples": 20}})
    rng = np.random.default_rng(8)
    for _ in range(2 * 96 + 10):
        t0 = clock.now()
        clock.advance(900)
        batch = []
        for t in np.sort(rng.integers(t0, clock.now(), 30)).tolist():
            batch.append({"timestamp": t, "kind": "impression", "cost_micros": 1000})
            if rng.random() < 0.05:
                batch.append({"timestamp": t, "kind": "click"})
        assert client.post("/v1/events", json={"events": batch}).status_code == 200
    before = client.get("/v1/stats").json()
    rt.close()
    rt2 = Runtime(tmp_path / "svc", clock)
    rt2.resume("audit")
    after = TestClient(create_app(rt2)).get("/v1/stats").json()
    rt2.close()
    stats_equal = before == after and before["last_refresh"] == SIM_EPOCH + 2 * DAY
    ok = all(identical) and stats_equal
    return record(8, ok, f"replayed reports byte-identical: {identical}; /v1/stats equal after restart: {stats_equal}")


# 9. comparator policies

def check_comparators():
    arms = tuple(f"arm{i}" for i in range(5))

    class Flat:
        def generate(self, arm, start, end, rng):
            n = 50
            ts = np.sort(rng.integers(start, end, n))
            return EventTable(ts, np.zeros(n, np.int8), np.zeros(n, np.int64), np.full(n, -1, np.int32), arms)

    Flat.arms = arms
    sched = ScheduleConfig(swap_interval=900, kpi_refresh_interval=3600, run_duration=DAY)
    res = run(Flat(), PolicyConfig(kind=PolicyKind.UCB), sched, seed=0, kpi=KpiSpec(min_samples=1))
    first = [d.chosen for d in res.decisions[:5]]
    ucb_ok = sorted(first) == sorted(arms)

    scores = [ArmScore(a, v, samples=1000, qualified=True) for a, v in zip(arms, (0.01, 0.02, 0.5, 0.0, 1.0))]
    sm = softmax_probabilities(scores, 1e6)
    sm_dev = max(abs(x - 0.2) for x in sm.probs)

    rng = np.random.default_rng(9)
    wins = sum(thompson_draw([("x", 101, 901), ("y", 11, 991)], rng) == "x" for _ in range(10_000))
    ok = ucb_ok and sm_dev <= 1e-3 and wins / 10_000 > 0.99
    return record(9, ok, f"UCB first five picks {first} (all distinct={ucb_ok}); softmax max deviation from uniform "
                         f"{sm_dev:.1e}; Thompson picked Beta(101,901) in {wins / 100:.2f}% of 10^4 draws")


def test_criterion_1_formula_fidelity():
    ok, detail = check_formulas()
    assert ok, detail


def test_criterion_2_sampling():
    ok, detail = check_sampling()
    assert ok, detail


def test_criterion_3_attribution_oracle():
    ok, detail = check_oracle()
    assert ok, detail


def test_criterion_4_cadence():
    ok, detail = check_cadence()
    assert ok, detail


def test_criterion_5_lookback_dynamics():
    ok, detail = check_lookback()
    assert ok, detail


def test_criterion_6_features_dynamics():
    ok, detail = check_features()
    assert ok, detail


def test_criterion_7_beats_ab_baseline():
    ok, detail = check_ab()
    assert ok, detail


def test_criterion_8_audit(tmp_path):
    ok, detail = check_audit(tmp_path)
    assert ok, detail


def test_criterion_9_comparators():
    ok, detail = check_comparators()
    assert ok, detail


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    checks = [check_formulas, check_sampling, check_oracle, check_cadence, check_lookback, check_features, check_ab,
              lambda: check_audit(Path(tempfile.mkdtemp())), check_comparators]
    for i, check in enumerate(checks, start=1):
        ok, detail = check()
        print(f"criterion {i}: {'PASS' if ok else 'FAIL'}  {detail}")
