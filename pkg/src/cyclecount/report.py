"""Pipeline orchestration and report emission.

``run_pipeline`` composes cleanse -> score -> bin -> order selection -> model
fits -> ANOVA -> dispersion -> complexity tests -> plot data into one
RunReport. The JSON emission is byte-deterministic for identical inputs; CSV
tables and optional figures are derived views of the same numbers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .cohort import (
    FRAIL,
    NON_FRAIL,
    CohortLabel,
    default_charlson_table,
    default_hfrs_table,
    label_visits,
    load_weight_table,
)
from .complexity import (
    TestResult,
    chi_square_2x2,
    mann_whitney_u,
    median_iqr,
    rmst_diff,
)
from .config import RunConfig
from .errors import CycleCountError, PipelineError
from .harmonic_glm import (
    FourierSpec,
    anova_nested,
    build_design,
    dispersion,
    fit_poisson,
    predict_rate_curve,
    select_orders,
)
from .ingest import VisitRecord, cleanse, parse_row, parse_visits
from .timeseries import (
    N_SLOTS,
    StudyPeriod,
    WeekSlot,
    bin_hourly,
    gp_hours_flag,
    normalized_rates,
    tabulate_by_gp_hours,
    week_slot_of,
)

SCHEMA_VERSION = 1

Labelled = tuple[VisitRecord, CohortLabel]


@dataclass
class RunReport:
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return self.payload

    def to_json(self) -> str:
        return json.dumps(
            _sanitize(self.payload), indent=2, sort_keys=True, allow_nan=False
        )


def _sanitize(obj: Any) -> Any:
    """Replace non-finite floats with None so JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return None

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(name, exc) from exc
            return False

    return _Ctx()


def _measure_values(pairs: Sequence[Labelled], measure: str) -> list[float]:
    if measure == "triage":
        return [float(rec.triage) for rec, _ in pairs]
    if measure == "charlson":
        return [float(label.charlson) for _, label in pairs]
    if measure == "los":
        return [rec.los_minutes for rec, _ in pairs]
    raise ValueError(f"unknown measure: {measure}")


def _admission_table(a: Sequence[Labelled], b: Sequence[Labelled]) -> list[list[int]]:
    def split(pairs: Sequence[Labelled]) -> list[int]:
        admitted = sum(1 for rec, _ in pairs if rec.admitted)
        return [admitted, len(pairs) - admitted]

    return [split(a), split(b)]


def _rmst_with_clamp(
    los_a: list[float], los_b: list[float], tau: float
) -> TestResult:
    # LOS data is fully observed, so the only reason tau can fail is a
    # follow-up shorter than the configured horizon; clamp and record it.
    effective = min(tau, max(los_a), max(los_b))
    result = rmst_diff(los_a, los_b, effective)
    if effective != tau:
        result.extras["tau_requested"] = tau
        result.extras["tau_clamped"] = True
    return result


def compare_measures(
    pairs_a: Sequence[Labelled],
    pairs_b: Sequence[Labelled],
    label_a: str,
    label_b: str,
    comparison: str,
    measures: Sequence[str],
    tau: float,
) -> list[dict[str, Any]]:
    """Run the configured tests for one two-group comparison."""
    out = []
    for measure in measures:
        if measure == "admitted":
            result = chi_square_2x2(_admission_table(pairs_a, pairs_b))
        elif measure == "los":
            result = _rmst_with_clamp(
                _measure_values(pairs_a, "los"), _measure_values(pairs_b, "los"), tau
            )
        else:
            result = mann_whitney_u(
                _measure_values(pairs_a, measure), _measure_values(pairs_b, measure)
            )
        out.append(
            {
                "comparison": comparison,
                "measure": measure,
                "a": label_a,
                "b": label_b,
                "result": result.to_dict(),
            }
        )
    return out


def _histogram(values: list[float], edges: np.ndarray) -> dict[str, Any]:
    counts, _ = np.histogram(values, bins=edges)
    rel = counts / max(len(values), 1)
    med, q1, q3 = median_iqr(values)
    return {
        "bin_edges": [float(e) for e in edges],
        "rel_freq": [float(r) for r in rel],
        "n": len(values),
        "median": med,
        "iqr": [q1, q3],
    }


def run_pipeline(input_path: str | Path, config: RunConfig | None = None) -> RunReport:
    """Execute every stage; any failure aborts with the stage name attached."""
    config = config or RunConfig()

    with _stage("parse"):
        parsed = parse_visits(
            input_path, schema=config.columns or None, delimiter=config.delimiter
        )
    with _stage("cleanse"):
        kept, cleanse_report = cleanse(parsed.records, config.cleanse)
    with _stage("score"):
        hfrs_table = (
            load_weight_table(config.hfrs_table)
            if config.hfrs_table
            else default_hfrs_table()
        )
        charlson_table = (
            load_weight_table(config.charlson_table)
            if config.charlson_table
            else default_charlson_table()
        )
        labelled = label_visits(kept, hfrs_table, charlson_table, config.cohort)
    with _stage("bin"):
        period = None
        if config.study_start and config.study_end:
            period = StudyPeriod(config.study_start, config.study_end)
        frail_series, nonfrail_series = bin_hourly(labelled, period)
        counts_table = tabulate_by_gp_hours(labelled, config.gp_hours)
    with _stage("rates"):
        observed = {
            FRAIL: normalized_rates(frail_series),
            NON_FRAIL: normalized_rates(nonfrail_series),
        }
    with _stage("select_orders"):
        pair = (frail_series, nonfrail_series)
        if config.model.k_weekly is not None and config.model.k_daily is not None:
            selection = None
            k_weekly, k_daily = config.model.k_weekly, config.model.k_daily
        else:
            selection = select_orders(
                pair, config.model.kw_search, config.model.kd_search, config.fit
            )
            k_weekly, k_daily = selection.k_weekly, selection.k_daily
    with _stage("fit_baseline"):
        base_spec = FourierSpec(k_weekly, k_daily, frail_interaction=False)
        baseline = fit_poisson(build_design(pair, base_spec), controls=config.fit)
    with _stage("fit_extended"):
        ext_spec = FourierSpec(k_weekly, k_daily, frail_interaction=True)
        extended = fit_poisson(build_design(pair, ext_spec), controls=config.fit)
    with _stage("anova"):
        anova = anova_nested(baseline, extended)
    with _stage("dispersion"):
        phi = {}
        for series in pair:
            solo = fit_poisson(build_design([series], base_spec), controls=config.fit)
            phi[series.group] = dispersion(solo)
    with _stage("complexity"):
        frail_pairs = [p for p in labelled if p[1].frail]
        nonfrail_pairs = [p for p in labelled if not p[1].frail]

        def in_gp(pair_: Labelled) -> bool:
            return gp_hours_flag(week_slot_of(pair_[0].arrival), config.gp_hours)

        frail_within = [p for p in frail_pairs if in_gp(p)]
        frail_outside = [p for p in frail_pairs if not in_gp(p)]
        tau = config.complexity.tau_minutes
        measures = config.complexity.measures
        tests = compare_measures(
            frail_pairs, nonfrail_pairs, FRAIL, NON_FRAIL, "cohort", measures, tau
        )
        tests += compare_measures(
            frail_within,
            frail_outside,
            "frail within GP hours",
            "frail outside GP hours",
            "gp_hours",
            measures,
            tau,
        )
    with _stage("plot_data"):
        fitted = {
            FRAIL: predict_rate_curve(extended, FRAIL),
            NON_FRAIL: predict_rate_curve(extended, NON_FRAIL),
        }
        gp_flags = [
            gp_hours_flag(WeekSlot.from_index(i), config.gp_hours)
            for i in range(N_SLOTS)
        ]
        los_cap = config.cleanse.los_cap_minutes
        width = config.histograms.los_bin_minutes
        los_edges = np.arange(0.0, los_cap + width, width)
        histograms: dict[str, Any] = {}
        for measure in ("los", "triage", "charlson"):
            histograms[measure] = {}
            for name, pairs in ((FRAIL, frail_pairs), (NON_FRAIL, nonfrail_pairs)):
                values = _measure_values(pairs, measure)
                if measure == "los":
                    edges = los_edges
                elif measure == "triage":
                    edges = np.arange(0.5, 6.5, 1.0)
                else:
                    top = max(values) if values else 0
                    edges = np.arange(-0.5, top + 1.5, 1.0)
                histograms[measure][name] = _histogram(values, edges)

    payload = {
        "schema_version": SCHEMA_VERSION,
        "meta": {"package": "cyclecount", "version": __version__},
        "cleanse": {
            **cleanse_report.to_dict(),
            "malformed_rows": len(parsed.malformed),
        },
        "cohort_counts": counts_table,
        "study_period": {
            "start": frail_series.start.isoformat(),
            "n_hours": frail_series.n_hours,
        },
        "selection": None if selection is None else selection.to_dict(),
        "orders": {"k_weekly": k_weekly, "k_daily": k_daily},
        "models": {"baseline": baseline.summary(), "extended": extended.summary()},
        "anova": anova.to_dict(),
        "dispersion": phi,
        "complexity": tests,
        "rates": {
            "slot_index": list(range(N_SLOTS)),
            "gp_hours": gp_flags,
            "observed": {g: [float(v) for v in obs] for g, obs in observed.items()},
            "fitted": {g: [float(v) for v in fit] for g, fit in fitted.items()},
        },
        "histograms": histograms,
    }
    return RunReport(payload=payload)


# ---------------------------------------------------------------------------
# Emission


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(
    report: RunReport,
    out_dir: str | Path,
    csv_tables: bool = True,
    svg: bool = False,
) -> list[Path]:
    """Write report.json (source of truth), per-table CSVs, and optionally
    SVG figures. Re-emission over the same directory is idempotent."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    paths = [out / "report.json"]
    paths[0].write_text(report.to_json() + "\n", encoding="utf-8")

    if csv_tables:
        paths += _emit_csv_tables(payload, out)
    if svg:
        from .figures import render_figures

        paths += render_figures(payload, out)
    return paths


def _emit_csv_tables(payload: dict[str, Any], out: Path) -> list[Path]:
    paths = []

    p = out / "cohort_counts.csv"
    rows = [
        [window, row[FRAIL], row[NON_FRAIL], row["total"]]
        for window, row in payload["cohort_counts"].items()
    ]
    _write_csv(p, ["window", "frail", "non_frail", "total"], rows)
    paths.append(p)

    p = out / "cleanse.csv"
    rows = [["input", payload["cleanse"]["input_count"]]]
    rows += [["retained", payload["cleanse"]["retained_count"]]]
    rows += [
        [f"removed:{rule}", n]
        for rule, n in payload["cleanse"]["removed_by_rule"].items()
    ]
    _write_csv(p, ["item", "count"], rows)
    paths.append(p)

    p = out / "coefficients.csv"
    rows = []
    for model_name in ("baseline", "extended"):
        for coef in payload["models"][model_name]["coefficients"]:
            rows.append([model_name, coef["name"], coef["estimate"], coef["se"]])
    _write_csv(p, ["model", "name", "estimate", "se"], rows)
    paths.append(p)

    p = out / "anova.csv"
    a = payload["anova"]
    rows = [
        ["baseline", a["resid_df"][0], a["resid_deviance"][0], "", ""],
        [
            "extended",
            a["resid_df"][1],
            a["resid_deviance"][1],
            a["deviance_drop"],
            a["p"],
        ],
    ]
    _write_csv(p, ["model", "resid_df", "resid_deviance", "deviance_drop", "p"], rows)
    paths.append(p)

    p = out / "dispersion.csv"
    rows = [[group, phi] for group, phi in payload["dispersion"].items()]
    _write_csv(p, ["group", "dispersion"], rows)
    paths.append(p)

    p = out / "complexity.csv"
    rows = []
    for entry in payload["complexity"]:
        r = entry["result"]
        ci = r["ci95"] or [None, None]
        rows.append(
            [
                entry["comparison"],
                entry["measure"],
                entry["a"],
                entry["b"],
                r["test"],
                r["statistic"],
                r["df"],
                r["p"],
                r["effect"],
                ci[0],
                ci[1],
            ]
        )
    _write_csv(
        p,
        [
            "comparison",
            "measure",
            "a",
            "b",
            "test",
            "statistic",
            "df",
            "p",
            "effect",
            "ci_lo",
            "ci_hi",
        ],
        rows,
    )
    paths.append(p)

    p = out / "rates.csv"
    rates = payload["rates"]
    rows = []
    for i in rates["slot_index"]:
        slot = WeekSlot.from_index(i)
        rows.append(
            [
                i,
                slot.day,
                slot.hour,
                rates["gp_hours"][i],
                rates["observed"][FRAIL][i],
                rates["observed"][NON_FRAIL][i],
                rates["fitted"][FRAIL][i],
                rates["fitted"][NON_FRAIL][i],
            ]
        )
    _write_csv(
        p,
        [
            "slot_index",
            "day",
            "hour",
            "gp_hours",
            "observed_frail",
            "observed_non_frail",
            "fitted_frail",
            "fitted_non_frail",
        ],
        rows,
    )
    paths.append(p)

    p = out / "histograms.csv"
    rows = []
    for measure, groups in payload["histograms"].items():
        for group, h in groups.items():
            edges = h["bin_edges"]
            for j, freq in enumerate(h["rel_freq"]):
                rows.append([measure, group, edges[j], edges[j + 1], freq])
    _write_csv(p, ["measure", "group", "bin_lo", "bin_hi", "rel_freq"], rows)
    paths.append(p)

    p = out / "histogram_stats.csv"
    rows = []
    for measure, groups in payload["histograms"].items():
        for group, h in groups.items():
            rows.append(
                [measure, group, h["n"], h["median"], h["iqr"][0], h["iqr"][1]]
            )
    _write_csv(p, ["measure", "group", "n", "median", "q1", "q3"], rows)
    paths.append(p)

    return paths


def read_table(path: str | Path) -> list[dict[str, str]]:
    """Read back any emitted CSV table as a list of row dicts."""
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Scored-file round trip used by the bin/complexity CLI steps


def read_labelled_csv(
    path: str | Path, delimiter: str = ","
) -> list[Labelled]:
    """Read a score-step CSV (canonical columns + hfrs, charlson, frail)."""
    pairs: list[Labelled] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        needed = {"hfrs", "charlson", "frail"}
        if not needed <= set(reader.fieldnames or []):
            raise CycleCountError(
                f"scored file needs columns {sorted(needed)}; run 'score' first"
            )
        for row in reader:
            record = parse_row(row)
            label = CohortLabel(
                frail=row["frail"].strip() == "1",
                hfrs=float(row["hfrs"]),
                charlson=int(row["charlson"]),
                age=record.age,
            )
            pairs.append((record, label))
    return pairs
