"""Per-day report series: activation probability, cumulative impressions and
windowed cumulative CTR for every arm.

The same function serves live runs and replays, so the two can be compared
byte for byte once written to CSV.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ams.bandit import SelectionDecision
from ams.events import EventKind, EventTable
from ams.kpi import SECONDS_PER_DAY

CSV_COLUMNS = ("day", "arm", "activation_probability", "cumulative_impressions", "windowed_cumCTR")


@dataclass(frozen=True)
class DailyRow:
    day: int
    arm: str
    activation_probability: float
    cumulative_impressions: int
    windowed_ctr: Optional[float]


def report_days(events: EventTable, decisions: Sequence[SelectionDecision]) -> int:
    """Number of whole or partial days spanned by the run."""
    if not decisions:
        return 0
    start = decisions[0].timestamp
    end = decisions[-1].timestamp
    attributed = events.timestamp[events.arm >= 0]
    if len(attributed):
        end = max(end, int(attributed.max()) + 1)
    return max(1, math.ceil((end - start) / SECONDS_PER_DAY))


def daily_series(
    events: EventTable,
    decisions: Sequence[SelectionDecision],
    arms: Sequence[str],
    lookback_days: float = 30.0,
) -> list[DailyRow]:
    if not decisions:
        return []
    arms = tuple(arms)
    events = events.recode(arms)
    start = decisions[0].timestamp
    n_days = report_days(events, decisions)
    lookback = lookback_days * SECONDS_PER_DAY

    dec_ts = np.array([d.timestamp for d in decisions], dtype=np.int64)
    dec_probs = np.array([[d.probabilities[a] for a in arms] for d in decisions], dtype=float)

    per_arm = {}
    for i, arm in enumerate(arms):
        mine = events.arm == i
        imp = np.sort(events.timestamp[mine & (events.kind == EventKind.IMPRESSION)])
        clk = np.sort(events.timestamp[mine & (events.kind == EventKind.CLICK)])
        per_arm[arm] = (imp, clk)

    rows = []
    for day in range(n_days):
        day_start = start + day * SECONDS_PER_DAY
        day_end = day_start + SECONDS_PER_DAY
        lo, hi = np.searchsorted(dec_ts, [day_start, day_end], side="left")
        if hi > lo:
            probs = [math.fsum(dec_probs[lo:hi, i]) / (hi - lo) for i in range(len(arms))]
        else:
            # no swap fell inside this day; the last vector stays in force
            probs = dec_probs[max(lo - 1, 0)].tolist()
        window_start = math.ceil(day_end - lookback)
        for i, arm in enumerate(arms):
            imp, clk = per_arm[arm]
            cum = int(np.searchsorted(imp, day_end, side="left"))
            w_imp = cum - int(np.searchsorted(imp, window_start, side="left"))
            w_clk = int(np.searchsorted(clk, day_end, side="left") - np.searchsorted(clk, window_start, side="left"))
            rows.append(DailyRow(day, arm, float(probs[i]), cum, w_clk / w_imp if w_imp else None))
    return rows


def daily_impressions(rows: Sequence[DailyRow]) -> dict[str, list[int]]:
    """Impressions bought per day for each arm, recovered from the cumulative column."""
    cumulative: dict[str, list[int]] = {}
    for r in rows:
        cumulative.setdefault(r.arm, []).append(r.cumulative_impressions)
    return {a: [c - p for c, p in zip(v, [0] + v[:-1])] for a, v in cumulative.items()}


def series_by_arm(rows: Sequence[DailyRow], field: str) -> dict[str, list]:
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r.arm, []).append(getattr(r, field))
    return out


def report_csv(rows: Sequence[DailyRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([
            r.day,
            r.arm,
            repr(r.activation_probability),
            r.cumulative_impressions,
            "" if r.windowed_ctr is None else repr(r.windowed_ctr),
        ])
    return buf.getvalue()


def write_report(rows: Sequence[DailyRow], path: Path) -> Path:
    path = Path(path)
    path.write_text(report_csv(rows), encoding="utf-8")
    return path


def read_report(path: Path) -> list[DailyRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            DailyRow(
                int(r["day"]),
                r["arm"],
                float(r["activation_probability"]),
                int(r["cumulative_impressions"]),
                float(r["windowed_cumCTR"]) if r["windowed_cumCTR"] else None,
            )
            for r in reader
        ]
