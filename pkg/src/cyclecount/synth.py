"""Synthetic visit generation from a cyclic-intensity Poisson process.

Counts are drawn per hourly bin (arrivals are homogeneous within an hour),
with arrival minutes uniform inside the bin. Visit attributes come from
configurable per-group models; ICD codes are composed so that re-scoring the
records through the cohort module reproduces the intended group and
comorbidity score exactly. All output is a pure function of (config, seed);
the RNG is numpy's PCG64, seeded per replicate as seed XOR replicate index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .cohort import FRAIL, NON_FRAIL
from .config import FitControls, GpHoursConfig
from .errors import CycleCountError
from .harmonic_glm import (
    FourierSpec,
    anova_nested,
    build_design,
    dispersion,
    fit_poisson,
    select_orders,
)
from .ingest import VisitRecord
from .timeseries import N_SLOTS, SlotSeries, WeekSlot

# Marker codes that put a visit over the frailty threshold (combined weight
# 6.8 in the default table) without touching any comorbidity category.
FRAIL_MARKER_CODES = ("W19", "R29")

# One code per comorbidity category, none of which carries frailty weight in
# the default tables, so sampled scores survive the pipeline unchanged.
CHARLSON_MENU = {
    6: ("C77", "B20"),
    3: ("K721",),
    2: ("E112", "C50", "G82"),
    1: ("I21", "I50", "I70", "J44", "M05", "K25", "K73", "E119"),
}
NEUTRAL_CODE = "Z00"  # matches nothing; keeps the diagnosis list non-empty

MAX_COMPOSABLE_SCORE = sum(w * len(codes) for w, codes in CHARLSON_MENU.items())


def compose_charlson_codes(target: int) -> list[str]:
    """Pick distinct-category codes whose weights sum to the target score."""
    if not 0 <= target <= MAX_COMPOSABLE_SCORE:
        raise ValueError(f"charlson target {target} outside 0..{MAX_COMPOSABLE_SCORE}")
    remaining = target
    picked: list[str] = []
    for weight in (6, 3, 2, 1):
        for code in CHARLSON_MENU[weight]:
            if remaining >= weight:
                picked.append(code)
                remaining -= weight
    if remaining:
        raise AssertionError("greedy decomposition failed")  # unreachable by bound
    return picked


@dataclass(frozen=True)
class LosModel:
    """Length-of-stay sampler; minutes are rounded and clipped to [1, cap]."""

    kind: str = "lognormal"
    params: tuple[float, ...] = (5.0, 0.5)
    cap_minutes: float = 600.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "lognormal":
            raw = rng.lognormal(self.params[0], self.params[1], size)
        elif self.kind == "exponential":
            raw = rng.exponential(self.params[0], size)
        elif self.kind == "uniform":
            raw = rng.uniform(self.params[0], self.params[1], size)
        else:
            raise ValueError(f"unknown LOS model kind: {self.kind}")
        return np.clip(np.round(raw), 1, self.cap_minutes).astype(int)


@dataclass(frozen=True)
class AttributeModel:
    admit_prob: float = 0.5
    triage_probs: tuple[float, ...] = (0.05, 0.15, 0.35, 0.30, 0.15)
    charlson_probs: tuple[float, ...] = (0.5, 0.3, 0.2)
    los: LosModel = LosModel()
    age_range: tuple[int, int] = (18, 90)

    def __post_init__(self):
        for name in ("triage_probs", "charlson_probs"):
            probs = getattr(self, name)
            if abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1")
        if len(self.triage_probs) != 5:
            raise ValueError("triage_probs needs 5 entries")
        if len(self.charlson_probs) - 1 > MAX_COMPOSABLE_SCORE:
            raise ValueError("charlson_probs extends past composable scores")


@dataclass(frozen=True)
class GeneratorConfig:
    """Coefficients use the fitted model's names: a0, a1/b1.., alpha1/beta1..,
    and optionally the frail-only x/y/xi/eta blocks."""

    coefficients: Mapping[str, float]
    n_frail: int
    n_nonfrail: int
    weeks: int
    seed: int
    start: datetime = datetime(2017, 1, 2)  # a Monday, so slots align
    attributes: Mapping[str, AttributeModel] = field(
        default_factory=lambda: {FRAIL: AttributeModel(), NON_FRAIL: AttributeModel()}
    )

    def __post_init__(self):
        if self.start.weekday() != 0 or self.start.hour or self.start.minute:
            raise ValueError("start must be a Monday at 00:00")
        if self.weeks < 1:
            raise ValueError("weeks must be positive")

    @property
    def n_hours(self) -> int:
        return self.weeks * N_SLOTS

    def group_size(self, group: str) -> int:
        return self.n_frail if group == FRAIL else self.n_nonfrail

    def true_orders(self) -> tuple[int, int]:
        kw = max(
            [int(n[1:]) for n in self.coefficients if n[0] in "ab" and n != "a0"]
            + [0]
        )
        kd = max(
            [
                int(n[5:]) if n.startswith("alpha") else int(n[4:])
                for n in self.coefficients
                if n.startswith(("alpha", "beta"))
            ]
            + [0]
        )
        return kw, kd

    def to_dict(self) -> dict[str, Any]:
        return {
            "coefficients": dict(self.coefficients),
            "n_frail": self.n_frail,
            "n_nonfrail": self.n_nonfrail,
            "weeks": self.weeks,
            "seed": self.seed,
            "start": self.start.isoformat(),
            "attributes": {
                group: {
                    "admit_prob": m.admit_prob,
                    "triage_probs": list(m.triage_probs),
                    "charlson_probs": list(m.charlson_probs),
                    "los": {
                        "kind": m.los.kind,
                        "params": list(m.los.params),
                        "cap_minutes": m.los.cap_minutes,
                    },
                    "age_range": list(m.age_range),
                }
                for group, m in self.attributes.items()
            },
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "GeneratorConfig":
        attrs = {}
        for group, m in raw.get("attributes", {}).items():
            los_raw = m.get("los", {})
            attrs[group] = AttributeModel(
                admit_prob=m.get("admit_prob", 0.5),
                triage_probs=tuple(m.get("triage_probs", (0.05, 0.15, 0.35, 0.30, 0.15))),
                charlson_probs=tuple(m.get("charlson_probs", (0.5, 0.3, 0.2))),
                los=LosModel(
                    kind=los_raw.get("kind", "lognormal"),
                    params=tuple(los_raw.get("params", (5.0, 0.5))),
                    cap_minutes=los_raw.get("cap_minutes", 600.0),
                ),
                age_range=tuple(m.get("age_range", (18, 90))),
            )
        kwargs: dict[str, Any] = {
            "coefficients": dict(raw["coefficients"]),
            "n_frail": int(raw["n_frail"]),
            "n_nonfrail": int(raw["n_nonfrail"]),
            "weeks": int(raw["weeks"]),
            "seed": int(raw["seed"]),
        }
        if "start" in raw:
            kwargs["start"] = datetime.fromisoformat(raw["start"])
        if attrs:
            kwargs["attributes"] = attrs
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "GeneratorConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def slot_log_profile(coefficients: Mapping[str, float], frail: bool) -> np.ndarray:
    """Log intensity shape over the 168 slots, excluding a0 and ln N."""
    slots = np.arange(N_SLOTS)
    day = slots // 24
    hour = slots % 24
    lp = np.zeros(N_SLOTS)
    for name, value in coefficients.items():
        if name == "a0" or value == 0.0:
            continue
        if name.startswith("alpha"):
            lp += value * np.cos(2 * np.pi * int(name[5:]) * hour / 24.0)
        elif name.startswith("beta"):
            lp += value * np.sin(2 * np.pi * int(name[4:]) * hour / 24.0)
        elif name.startswith("xi"):
            if frail:
                lp += value * np.cos(2 * np.pi * int(name[2:]) * hour / 24.0)
        elif name.startswith("eta"):
            if frail:
                lp += value * np.sin(2 * np.pi * int(name[3:]) * hour / 24.0)
        elif name.startswith("a"):
            lp += value * np.cos(2 * np.pi * int(name[1:]) * day / 7.0)
        elif name.startswith("b"):
            lp += value * np.sin(2 * np.pi * int(name[1:]) * day / 7.0)
        elif name.startswith("x"):
            if frail:
                lp += value * np.cos(2 * np.pi * int(name[1:]) * day / 7.0)
        elif name.startswith("y"):
            if frail:
                lp += value * np.sin(2 * np.pi * int(name[1:]) * day / 7.0)
        else:
            raise ValueError(f"unknown coefficient name: {name}")
    return lp


def calibrated_intercept(
    coefficients: Mapping[str, float], weeks: int, frail: bool = False
) -> float:
    """a0 making the expected total over the period equal the group size."""
    profile = slot_log_profile(coefficients, frail=frail)
    return -math.log(weeks * float(np.exp(profile).sum()))


def hourly_intensity(config: GeneratorConfig, group: str) -> np.ndarray:
    """Expected arrivals per hour for one group over the whole period."""
    frail = group == FRAIL
    lp = slot_log_profile(config.coefficients, frail=frail)
    a0 = float(config.coefficients.get("a0", 0.0))
    profile = config.group_size(group) * np.exp(a0 + lp)
    return np.tile(profile, config.weeks)


def simulate_counts(
    config: GeneratorConfig, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Hourly Poisson draws per group; non-frail drawn first for determinism."""
    return {
        group: rng.poisson(hourly_intensity(config, group))
        for group in (NON_FRAIL, FRAIL)
    }


@dataclass
class SimulatedData:
    visits: list[VisitRecord]
    groups: list[str]  # true group per visit
    config: GeneratorConfig


def _group_codes(group: str, charlson_target: int) -> tuple[str, ...]:
    codes = list(FRAIL_MARKER_CODES) if group == FRAIL else []
    codes += compose_charlson_codes(charlson_target)
    if not codes:
        codes = [NEUTRAL_CODE]
    return tuple(codes)


def simulate_arrivals(config: GeneratorConfig) -> SimulatedData:
    """Draw a full synthetic dataset; deterministic given the config seed."""
    rng = np.random.default_rng(config.seed)
    counts = simulate_counts(config, rng)
    visits: list[VisitRecord] = []
    groups: list[str] = []
    serial = 0
    for group in (NON_FRAIL, FRAIL):
        model = config.attributes[group]
        c = counts[group]
        total = int(c.sum())
        minutes = rng.integers(0, 60, total)
        ages = rng.integers(model.age_range[0], model.age_range[1] + 1, total)
        triage = 1 + rng.choice(5, size=total, p=model.triage_probs)
        charlson = rng.choice(
            len(model.charlson_probs), size=total, p=model.charlson_probs
        )
        admitted = rng.random(total) < model.admit_prob
        los = model.los.sample(rng, total)
        k = 0
        for t in range(config.n_hours):
            hour_start = config.start + timedelta(hours=t)
            for _ in range(int(c[t])):
                serial += 1
                arrival = hour_start + timedelta(minutes=int(minutes[k]))
                codes = _group_codes(group, int(charlson[k]))
                icd = tuple(
                    (code, "admission" if i == 0 else "discharge")
                    for i, code in enumerate(codes)
                )
                visits.append(
                    VisitRecord(
                        visit_id=f"S{serial:07d}",
                        arrival=arrival,
                        departure=arrival + timedelta(minutes=int(los[k])),
                        age=int(ages[k]),
                        icd_codes=icd,
                        triage=int(triage[k]),
                        admitted=bool(admitted[k]),
                    )
                )
                groups.append(group)
                k += 1
    return SimulatedData(visits=visits, groups=groups, config=config)


def paper_like_config(
    seed: int = 20170101,
    weeks: int = 83,
    n_frail: int = 6025,
    n_nonfrail: int = 42092,
    interaction: bool = False,
) -> GeneratorConfig:
    """Defaults at realistic ED scale with strong weekly and daily cycles."""
    coefficients: dict[str, float] = {
        "a1": 0.025, "b1": -0.013,
        "a2": -0.024, "b2": -0.026,
        "a3": -0.021, "b3": -0.020,
        "alpha1": -0.687, "beta1": -0.602,
        "alpha2": -0.203, "beta2": 0.269,
        "alpha3": 0.129, "beta3": -0.079,
        "alpha4": -0.055, "beta4": -0.028,
        "alpha5": -0.030, "beta5": 0.044,
        "alpha6": 0.024, "beta6": -0.024,
        "alpha7": -0.030, "beta7": -0.040,
    }
    if interaction:
        coefficients.update(
            {"x1": 0.077, "y1": -0.046, "xi1": -0.076, "eta1": -0.086}
        )
    coefficients["a0"] = calibrated_intercept(coefficients, weeks, frail=False)
    attributes = {
        NON_FRAIL: AttributeModel(
            admit_prob=0.467,
            triage_probs=(0.02, 0.08, 0.30, 0.40, 0.20),
            charlson_probs=(0.45, 0.25, 0.12, 0.08, 0.05, 0.03, 0.02),
            los=LosModel("lognormal", (5.0, 0.5)),
            age_range=(18, 92),
        ),
        FRAIL: AttributeModel(
            admit_prob=0.916,
            triage_probs=(0.05, 0.15, 0.45, 0.25, 0.10),
            charlson_probs=(
                0.05, 0.08, 0.10, 0.12, 0.13, 0.12, 0.10, 0.08, 0.07, 0.06,
                0.04, 0.03, 0.02,
            ),
            los=LosModel("lognormal", (5.2, 0.45)),
            age_range=(75, 95),
        ),
    }
    return GeneratorConfig(
        coefficients=coefficients,
        n_frail=n_frail,
        n_nonfrail=n_nonfrail,
        weeks=weeks,
        seed=seed,
        attributes=attributes,
    )


def table_matched_visits(
    cells: Mapping[str, Mapping[str, int]],
    gp_config: GpHoursConfig | None = None,
    start: datetime = datetime(2017, 1, 2),
) -> list[VisitRecord]:
    """Deterministic dataset hitting exact cohort x GP-hours cell counts.

    ``cells`` maps group ("frail"/"non-frail") to {"within": n, "outside": n}.
    """
    gp_config = gp_config or GpHoursConfig()
    if start.weekday() != 0:
        raise ValueError("start must be a Monday")
    within_slots = [
        WeekSlot(day, hour)
        for day in gp_config.days
        for hour in range(gp_config.start_hour, gp_config.end_hour)
    ]
    outside_slots = [
        WeekSlot(day, hour)
        for day in range(7)
        for hour in range(24)
        if not (day in gp_config.days and gp_config.start_hour <= hour < gp_config.end_hour)
    ]
    recipes = {
        FRAIL: {"age": 80, "codes": FRAIL_MARKER_CODES},
        NON_FRAIL: {"age": 50, "codes": (NEUTRAL_CODE,)},
    }
    visits: list[VisitRecord] = []
    serial = 0
    for group, windows in cells.items():
        recipe = recipes[group]
        for window, count in windows.items():
            slots = within_slots if window == "within" else outside_slots
            for i in range(count):
                serial += 1
                slot = slots[i % len(slots)]
                arrival = start + timedelta(days=slot.day, hours=slot.hour)
                visits.append(
                    VisitRecord(
                        visit_id=f"T{serial:07d}",
                        arrival=arrival,
                        departure=arrival + timedelta(minutes=120),
                        age=recipe["age"],
                        icd_codes=tuple((c, "admission") for c in recipe["codes"]),
                        triage=3,
                        admitted=False,
                    )
                )
    return visits


@dataclass
class RecoveryReport:
    """Aggregate of simulate-fit replicates used to validate the estimator."""

    replicates: int
    true_orders: tuple[int, int]
    coverage: dict[str, int]  # per coefficient: replicates with truth in 95% CI
    order_recovery: int
    anova_rejections: int  # p < .05 for the interaction block
    dispersions: list[float]
    selections: list[tuple[int, int]]
    failures: list[tuple[int, str]]

    @property
    def dispersion_mean(self) -> float:
        return float(np.mean(self.dispersions)) if self.dispersions else math.nan

    def to_dict(self) -> dict[str, Any]:
        return {
            "replicates": self.replicates,
            "true_orders": list(self.true_orders),
            "coverage": dict(self.coverage),
            "order_recovery": self.order_recovery,
            "anova_rejections": self.anova_rejections,
            "dispersion_mean": self.dispersion_mean,
            "dispersions": self.dispersions,
            "selections": [list(s) for s in self.selections],
            "failures": [list(f) for f in self.failures],
        }


def _series_from_counts(
    config: GeneratorConfig, counts: dict[str, np.ndarray]
) -> tuple[SlotSeries, SlotSeries]:
    def series(group: str) -> SlotSeries:
        c = counts[group]
        return SlotSeries(
            group=group, start=config.start, counts=c, n_patients=int(c.sum())
        )

    return series(FRAIL), series(NON_FRAIL)


def recovery_experiment(
    config: GeneratorConfig,
    replicates: int,
    kw_range: tuple[int, int] = (0, 3),
    kd_range: tuple[int, int] = (0, 12),
    controls: FitControls | None = None,
    alpha: float = 0.05,
    run_selection: bool = True,
) -> RecoveryReport:
    """Simulate, refit, and tally coefficient coverage, order recovery,
    dispersion, and the interaction test's rejection rate."""
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    kw_true, kd_true = config.true_orders()
    ext_spec = FourierSpec(kw_true, kd_true, frail_interaction=True)
    base_spec = FourierSpec(kw_true, kd_true, frail_interaction=False)
    z975 = 1.959963984540054

    coverage = {name: 0 for name in ext_spec.column_names}
    order_recovery = 0
    rejections = 0
    dispersions: list[float] = []
    selections: list[tuple[int, int]] = []
    failures: list[tuple[int, str]] = []

    for rep in range(replicates):
        rng = np.random.default_rng(config.seed ^ rep)
        counts = simulate_counts(config, rng)
        try:
            pair = _series_from_counts(config, counts)
            ext = fit_poisson(build_design(pair, ext_spec), controls=controls)
            base = fit_poisson(build_design(pair, base_spec), controls=controls)
            se = ext.se
            for j, name in enumerate(ext.names):
                truth = float(config.coefficients.get(name, 0.0))
                if abs(ext.coef[j] - truth) <= z975 * se[j]:
                    coverage[name] += 1
            dispersions.append(dispersion(ext))
            rejections += int(anova_nested(base, ext).p < alpha)
            if run_selection:
                sel = select_orders(pair, kw_range, kd_range, controls=controls)
                selections.append((sel.k_weekly, sel.k_daily))
                order_recovery += int(
                    (sel.k_weekly, sel.k_daily) == (kw_true, kd_true)
                )
        except CycleCountError as exc:
            failures.append((rep, str(exc)))

    return RecoveryReport(
        replicates=replicates,
        true_orders=(kw_true, kd_true),
        coverage=coverage,
        order_recovery=order_recovery,
        anova_rejections=rejections,
        dispersions=dispersions,
        selections=selections,
        failures=failures,
    )
