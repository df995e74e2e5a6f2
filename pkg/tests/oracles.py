"""Slow, obviously-correct reference implementations used as test oracles.

Plain Python loops over plain tuples; no numpy and nothing from ams.kpi.
"""

import random
from fractions import Fraction

KINDS = ("impression", "click", "conversion")


def random_log(seed, n_events=1000, n_intervals=50, arms=("a", "b", "c"), t0=1_600_000_000, span=40 * 86400):
    """Random raw events plus a random sorted, non-overlapping interval list (gaps allowed)."""
    r = random.Random(seed)
    cuts = sorted(r.sample(range(t0, t0 + span), 2 * n_intervals))
    intervals = []
    for i in range(n_intervals):
        start, end = cuts[2 * i], cuts[2 * i + 1]
        # close half the gaps so boundaries are shared, as in a real run
        if i and r.random() < 0.5:
            start = intervals[-1][1]
        intervals.append((start, end, r.choice(arms)))
    events = []
    for _ in range(n_events):
        # bias some events onto exact boundaries
        if r.random() < 0.1:
            iv = r.choice(intervals)
            ts = r.choice((iv[0], iv[1], iv[1] - 1))
        else:
            ts = r.randrange(t0 - 86400, t0 + span + 86400)
        kind = r.choice(KINDS)
        cost = r.randrange(0, 5_000_000) if kind == "impression" else 0
        events.append((ts, kind, cost))
    events.sort(key=lambda e: e[0])
    return events, intervals


def attribute(events, intervals):
    """Per-event linear scan: the arm of the interval with start <= ts < end, else None."""
    out = []
    for ts, kind, cost in events:
        arm = None
        for start, end, a in intervals:
            if start <= ts < end:
                arm = a
                break
        out.append((ts, kind, cost, arm))
    return out


def window_counts(attributed, arm, now, lookback_days):
    lo = Fraction(now) - Fraction(lookback_days) * 86400
    imp = clk = conv = spend = 0
    for ts, kind, cost, a in attributed:
        if a != arm or not (lo <= ts < now):
            continue
        if kind == "impression":
            imp += 1
            spend += cost
        elif kind == "click":
            clk += 1
        else:
            conv += 1
    return imp, clk, conv, spend


def kpi(kind, imp, clk, conv, spend):
    num, den = {"ctr": (clk, imp), "cpc": (spend, clk), "cpa": (spend, conv)}[kind]
    return None if den == 0 else num / den
