"""Hourly binning of visits per cohort and week-slot rate computation.

A week slot is one of the 168 (day-of-week, hour-of-day) cells, Monday = 0.
Timestamps are treated as local wall clock; no DST adjustment is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np

from .cohort import FRAIL, NON_FRAIL, CohortLabel
from .config import GpHoursConfig
from .errors import RateUndefinedError, StudyPeriodError
from .ingest import VisitRecord

HOUR = timedelta(hours=1)
N_SLOTS = 168


@dataclass(frozen=True)
class WeekSlot:
    day: int  # 0 = Monday .. 6 = Sunday
    hour: int  # 0..23

    def __post_init__(self):
        if not 0 <= self.day <= 6:
            raise ValueError(f"day out of range: {self.day}")
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour out of range: {self.hour}")

    @property
    def index(self) -> int:
        return 24 * self.day + self.hour

    @classmethod
    def from_index(cls, index: int) -> "WeekSlot":
        if not 0 <= index < N_SLOTS:
            raise ValueError(f"slot index out of range: {index}")
        return cls(day=index // 24, hour=index % 24)


def week_slot_of(ts: datetime) -> WeekSlot:
    return WeekSlot(day=ts.weekday(), hour=ts.hour)


def _floor_hour(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


@dataclass(frozen=True)
class StudyPeriod:
    """Half-open hour-aligned interval [start, end)."""

    start: datetime
    end: datetime

    def __post_init__(self):
        if self.start != _floor_hour(self.start) or self.end != _floor_hour(self.end):
            raise ValueError("study period bounds must lie on hour boundaries")
        if self.end <= self.start:
            raise ValueError("study period must span at least one hour")

    @property
    def n_hours(self) -> int:
        return int((self.end - self.start) / HOUR)

    def hour_index(self, ts: datetime) -> int:
        if not self.start <= ts < self.end:
            raise StudyPeriodError(f"timestamp outside study period: {ts.isoformat()}")
        return int((ts - self.start).total_seconds() // 3600)

    def hour_start(self, t: int) -> datetime:
        return self.start + t * HOUR

    def slot_indices(self) -> np.ndarray:
        """Week-slot index of every hour in the period."""
        first = week_slot_of(self.start).index
        return (first + np.arange(self.n_hours)) % N_SLOTS

    @classmethod
    def covering(cls, timestamps: Iterable[datetime]) -> "StudyPeriod":
        stamps = list(timestamps)
        if not stamps:
            raise StudyPeriodError(
                "cannot derive a study period from zero visits"
            )
        start = _floor_hour(min(stamps))
        end = _floor_hour(max(stamps)) + HOUR
        return cls(start=start, end=end)


@dataclass
class SlotSeries:
    """Hourly arrival counts for one cohort over the study period."""

    group: str
    start: datetime
    counts: np.ndarray  # one non-negative int per hour
    n_patients: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        if int(self.counts.sum()) != self.n_patients:
            raise ValueError("counts must total the group size")

    @property
    def n_hours(self) -> int:
        return int(self.counts.shape[0])

    @property
    def period(self) -> StudyPeriod:
        return StudyPeriod(self.start, self.start + self.n_hours * HOUR)

    def slot_indices(self) -> np.ndarray:
        return self.period.slot_indices()


def bin_hourly(
    labelled: Iterable[tuple[VisitRecord, CohortLabel]],
    period: StudyPeriod | None = None,
) -> tuple[SlotSeries, SlotSeries]:
    """Count each visit once in the hour of its arrival.

    Returns (frail, non-frail) series sharing one study period. When no
    period is given it is derived from the arrivals, rounded outward to hour
    boundaries. With an explicit period, any visit outside it is an error.
    """
    pairs = list(labelled)
    if period is None:
        period = StudyPeriod.covering(rec.arrival for rec, _label in pairs)

    outside = [
        rec.arrival
        for rec, _label in pairs
        if not period.start <= rec.arrival < period.end
    ]
    if outside:
        shown = ", ".join(ts.isoformat() for ts in sorted(outside)[:5])
        raise StudyPeriodError(
            f"{len(outside)} visit(s) outside the declared study period: {shown}"
        )

    counts = {
        FRAIL: np.zeros(period.n_hours, dtype=np.int64),
        NON_FRAIL: np.zeros(period.n_hours, dtype=np.int64),
    }
    for rec, label in pairs:
        counts[label.group][period.hour_index(rec.arrival)] += 1

    def series(group: str) -> SlotSeries:
        c = counts[group]
        return SlotSeries(
            group=group, start=period.start, counts=c, n_patients=int(c.sum())
        )

    return series(FRAIL), series(NON_FRAIL)


def slot_occurrences(period: StudyPeriod) -> np.ndarray:
    """How many times each of the 168 slots occurs within the period."""
    return np.bincount(period.slot_indices(), minlength=N_SLOTS)


def normalized_rates(series: SlotSeries) -> np.ndarray:
    """Per-slot mean hourly count divided by the group total.

    Slots that never occur in the study period come back as NaN.
    """
    if series.n_patients == 0:
        raise RateUndefinedError(
            f"group {series.group!r} has zero patients; rates undefined"
        )
    slots = series.slot_indices()
    sums = np.bincount(slots, weights=series.counts, minlength=N_SLOTS)
    occ = np.bincount(slots, minlength=N_SLOTS)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(occ > 0, sums / np.maximum(occ, 1), np.nan)
    return means / series.n_patients


def gp_hours_flag(slot: WeekSlot, config: GpHoursConfig | None = None) -> bool:
    """True inside regular GP working hours (half-open on the end hour)."""
    config = config or GpHoursConfig()
    return slot.day in config.days and config.start_hour <= slot.hour < config.end_hour


def tabulate_by_gp_hours(
    labelled: Iterable[tuple[VisitRecord, CohortLabel]],
    config: GpHoursConfig | None = None,
) -> dict[str, dict[str, int]]:
    """Cohort x GP-hours 2x2 counts with margins."""
    cells = {
        "within": {FRAIL: 0, NON_FRAIL: 0},
        "outside": {FRAIL: 0, NON_FRAIL: 0},
    }
    for rec, label in labelled:
        window = "within" if gp_hours_flag(week_slot_of(rec.arrival), config) else "outside"
        cells[window][label.group] += 1
    table: dict[str, dict[str, int]] = {}
    for window, row in cells.items():
        table[window] = {**row, "total": row[FRAIL] + row[NON_FRAIL]}
    table["total"] = {
        FRAIL: cells["within"][FRAIL] + cells["outside"][FRAIL],
        NON_FRAIL: cells["within"][NON_FRAIL] + cells["outside"][NON_FRAIL],
    }
    table["total"]["total"] = table["total"][FRAIL] + table["total"][NON_FRAIL]
    return table


def write_counts_csv(
    path, series_seq: Sequence[SlotSeries], delimiter: str = ","
) -> None:
    """Emit hourly counts as t_iso, slot_index, group, count rows."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["t_iso", "slot_index", "group", "count"])
        for series in series_seq:
            slots = series.slot_indices()
            for t in range(series.n_hours):
                writer.writerow(
                    [
                        series.period.hour_start(t).isoformat(timespec="minutes"),
                        int(slots[t]),
                        series.group,
                        int(series.counts[t]),
                    ]
                )


def read_counts_csv(path, delimiter: str = ",") -> list[SlotSeries]:
    """Read the bin-step CSV back into one SlotSeries per group."""
    import csv

    rows: dict[str, list[tuple[datetime, int]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        needed = {"t_iso", "group", "count"}
        if not needed <= set(reader.fieldnames or []):
            raise ValueError(f"counts file needs columns {sorted(needed)}")
        for row in reader:
            rows.setdefault(row["group"], []).append(
                (datetime.fromisoformat(row["t_iso"]), int(row["count"]))
            )
    out = []
    for group, entries in rows.items():
        entries.sort()
        counts = np.array([c for _ts, c in entries], dtype=np.int64)
        out.append(
            SlotSeries(
                group=group,
                start=entries[0][0],
                counts=counts,
                n_patients=int(counts.sum()),
            )
        )
    return out
