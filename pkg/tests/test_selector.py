import numpy as np
import pytest

from ams.bandit import PolicyConfig, PolicyKind
from ams.errors import ClockError, ConfigError
from ams.events import EventTable
from ams.kpi import KpiSpec
from ams.selector import (
    SIM_EPOCH,
    ScheduleConfig,
    Selector,
    SimulatedClock,
    decision_count,
    run,
    split_rng,
)
from ams.sim import CampaignSim, CtrCurve, SimScenario

DAY = 86400


def scenario(days=2, arms=(("a", 0.012), ("b", 0.008))):
    return SimScenario("t", tuple((a, CtrCurve.constant(c)) for a, c in arms), impressions_per_interval=200, duration_days=days)


def simulate(policy=None, days=2, seed=0, arms=(("a", 0.012), ("b", 0.008)), swap=900):
    sc = scenario(days, arms)
    sched = ScheduleConfig(swap_interval=swap, run_duration=days * DAY)
    return run(CampaignSim(sc, SIM_EPOCH, swap), policy or PolicyConfig(), sched, seed, KpiSpec())


def test_decisions_per_day():
    res = simulate(days=2)
    assert len(res.decisions) == 2 * 96 + 1
    assert decision_count(ScheduleConfig(run_duration=2 * DAY)) == 193
    ts = [d.timestamp for d in res.decisions]
    assert ts[0] == SIM_EPOCH and ts[-1] == SIM_EPOCH + 2 * DAY
    assert set(np.diff(ts)) == {900}


def test_refreshes_are_daily():
    res = simulate(days=2)
    assert res.state.refresh_times == [SIM_EPOCH + DAY, SIM_EPOCH + 2 * DAY]


def test_epsilon_decays_to_zero():
    res = simulate(PolicyConfig(epsilon0=0.3, alpha_days=1), days=2)
    eps = [d.epsilon_used for d in res.decisions]
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert all(d.epsilon_used == 0 for d in res.decisions if d.timestamp - SIM_EPOCH >= DAY)


def test_first_day_is_cold_start():
    res = simulate(days=2)
    for d in res.decisions:
        if d.timestamp < SIM_EPOCH + DAY:
            assert d.probabilities.probs == (0.5, 0.5)


def test_same_seed_same_run():
    a, b = simulate(seed=4), simulate(seed=4)
    assert a.decisions == b.decisions
    assert a.events == b.events
    assert simulate(seed=5).decisions != a.decisions


def test_single_arm():
    res = simulate(days=1, arms=(("solo", 0.01),))
    assert {d.chosen for d in res.decisions} == {"solo"}
    assert all(d.probabilities.probs == (1.0,) for d in res.decisions)


def test_irregular_tail_interval():
    # 2 days at 7-minute swaps does not divide evenly: decisions stay on the swap grid
    res = simulate(days=2, swap=420)
    assert len(res.decisions) == 2 * DAY // 420 + 1
    assert res.decisions[-1].timestamp == SIM_EPOCH + (2 * DAY // 420) * 420
    assert res.events.timestamp.max() < SIM_EPOCH + 2 * DAY


def test_clock_regression():
    sel = Selector(("a", "b"), PolicyConfig(), ScheduleConfig(), KpiSpec(), split_rng(0)[0], 1000)
    clock = SimulatedClock(1000)
    sel.tick(clock)
    clock.set(999)
    with pytest.raises(ClockError):
        sel.tick(clock)


def test_no_decision_between_swaps():
    sel = Selector(("a", "b"), PolicyConfig(), ScheduleConfig(), KpiSpec(), split_rng(0)[0], 0)
    clock = SimulatedClock(0)
    assert sel.tick(clock) is not None
    clock.set(899)
    assert sel.tick(clock) is None
    clock.set(900)
    assert sel.tick(clock) is not None


def test_late_tick_refreshes_once():
    sel = Selector(("a", "b"), PolicyConfig(), ScheduleConfig(), KpiSpec(), split_rng(0)[0], 0)
    clock = SimulatedClock(0)
    sel.tick(clock)
    clock.set(3 * DAY + 5)
    sel.tick(clock)
    assert sel.state.refresh_times == [3 * DAY + 5]
    assert sel.next_refresh == 4 * DAY


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ScheduleConfig(swap_interval=2 * DAY)
    with pytest.raises(ConfigError):
        ScheduleConfig(swap_interval=0)
    with pytest.raises(ConfigError):
        Selector((), PolicyConfig(), ScheduleConfig(), KpiSpec(), split_rng(0)[0], 0)


def test_restore_rebuilds_state():
    res = simulate(days=3, seed=2)
    sel = Selector(("a", "b"), PolicyConfig(), ScheduleConfig(run_duration=3 * DAY), KpiSpec(), split_rng(0)[0], SIM_EPOCH)
    sel.restore(res.decisions, res.events.recode(("a", "b")).with_arms(np.full(len(res.events), -1, np.int32), ("a", "b")))
    assert sel.state.refresh_times == res.state.refresh_times
    assert sel.state.current_snapshots == res.state.current_snapshots
    assert sel.buffer.table() == res.events
    assert sel.next_swap == SIM_EPOCH + 3 * DAY + 900


@pytest.mark.parametrize("kind", list(PolicyKind))
def test_every_policy_runs(kind):
    res = simulate(PolicyConfig(kind=kind), days=2)
    assert len(res.decisions) == 193
    for d in res.decisions:
        assert d.probabilities[d.chosen] > 0


def test_round_robin_alternates():
    res = simulate(PolicyConfig(kind=PolicyKind.ROUND_ROBIN), days=1)
    assert [d.chosen for d in res.decisions[:4]] == ["a", "b", "a", "b"]


def test_attribution_is_live():
    res = simulate(days=1, seed=9)
    starts = np.array([d.timestamp for d in res.decisions])
    chosen = [d.chosen for d in res.decisions]
    idx = np.searchsorted(starts, res.events.timestamp, side="right") - 1
    assert [res.events.arms[c] for c in res.events.arm] == [chosen[i] for i in idx]


def test_empty_source_interval():
    class Silent:
        arms = ("a", "b")

        def generate(self, arm, start, end, rng):
            return EventTable.empty(self.arms)

    res = run(Silent(), PolicyConfig(), ScheduleConfig(run_duration=DAY), 0)
    assert len(res.events) == 0 and len(res.decisions) == 97
