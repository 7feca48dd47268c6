"""Configuration dataclasses and the unified run-config file loader.

A single JSON file drives the whole pipeline; every section is optional and
falls back to the defaults below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class CleanseConfig:
    """Cleansing thresholds. LOS cap is strict: stays above the cap are removed."""

    los_cap_minutes: float = 600.0
    min_age: int = 18


@dataclass(frozen=True)
class CohortConfig:
    """Frailty classification thresholds (both inclusive)."""

    frail_age_min: int = 75
    hfrs_threshold: float = 5.0


@dataclass(frozen=True)
class GpHoursConfig:
    """Regular GP working hours: Monday-Friday, [start_hour, end_hour)."""

    days: tuple[int, ...] = (0, 1, 2, 3, 4)
    start_hour: int = 7
    end_hour: int = 17


@dataclass(frozen=True)
class FitControls:
    """IRLS convergence and rank-check settings."""

    tol: float = 1e-8
    max_iter: int = 50
    rank_tol: float = 1e-10


@dataclass(frozen=True)
class ModelConfig:
    """Harmonic orders; None selects them by AIC over the search grid."""

    k_weekly: int | None = None
    k_daily: int | None = None
    kw_search: tuple[int, int] = (0, 3)
    kd_search: tuple[int, int] = (0, 12)


@dataclass(frozen=True)
class ComplexityConfig:
    tau_minutes: float = 600.0
    measures: tuple[str, ...] = ("admitted", "triage", "charlson", "los")


@dataclass(frozen=True)
class HistogramConfig:
    los_bin_minutes: float = 30.0


@dataclass(frozen=True)
class RunConfig:
    """All module settings for one pipeline run."""

    delimiter: str = ","
    columns: dict[str, str] = field(default_factory=dict)
    cleanse: CleanseConfig = CleanseConfig()
    cohort: CohortConfig = CohortConfig()
    gp_hours: GpHoursConfig = GpHoursConfig()
    fit: FitControls = FitControls()
    model: ModelConfig = ModelConfig()
    complexity: ComplexityConfig = ComplexityConfig()
    histograms: HistogramConfig = HistogramConfig()
    hfrs_table: str | None = None
    charlson_table: str | None = None
    study_start: datetime | None = None
    study_end: datetime | None = None

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        kwargs: dict[str, Any] = {}
        for key in ("delimiter", "columns", "hfrs_table", "charlson_table"):
            if key in raw:
                kwargs[key] = raw[key]
        for key, sub in (
            ("cleanse", CleanseConfig),
            ("cohort", CohortConfig),
            ("gp_hours", GpHoursConfig),
            ("fit", FitControls),
            ("model", ModelConfig),
            ("complexity", ComplexityConfig),
            ("histograms", HistogramConfig),
        ):
            if key in raw:
                kwargs[key] = _build(sub, raw[key])
        period = raw.get("study_period", {})
        if period.get("start"):
            kwargs["study_start"] = datetime.fromisoformat(period["start"])
        if period.get("end"):
            kwargs["study_end"] = datetime.fromisoformat(period["end"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _build(cls: type, raw: dict[str, Any]) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {
        k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()
    }
    return cls(**coerced)
