"""Command line interface.

Subcommands mirror the pipeline stages so intermediate artifacts can be
inspected or swapped: cleanse, score, bin, fit, compare, complexity,
simulate, validate, and the end-to-end run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import __version__
from .cohort import (
    default_charlson_table,
    default_hfrs_table,
    label_visits,
    load_weight_table,
)
from .config import FitControls, GpHoursConfig, RunConfig
from .errors import CycleCountError, NonNestedError
from .harmonic_glm import (
    FourierSpec,
    build_design,
    dispersion,
    fit_poisson,
    nested_deviance_test,
    select_orders,
)
from .ingest import cleanse, parse_visits, write_visits_csv
from .report import (
    compare_measures,
    emit_report,
    read_labelled_csv,
    run_pipeline,
)
from .synth import GeneratorConfig, paper_like_config, recovery_experiment, simulate_arrivals
from .timeseries import bin_hourly, normalized_rates, read_counts_csv, slot_occurrences, write_counts_csv, N_SLOTS, WeekSlot, gp_hours_flag


def _load_run_config(path: str | None) -> RunConfig:
    return RunConfig.from_file(path) if path else RunConfig()


def _write_json(path: str | None, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_cleanse(args) -> int:
    config = _load_run_config(args.config)
    parsed = parse_visits(args.infile, schema=config.columns or None, delimiter=config.delimiter)
    kept, report = cleanse(parsed.records, config.cleanse)
    write_visits_csv(args.out, kept, delimiter=config.delimiter)
    payload = {
        **report.to_dict(),
        "malformed_rows": [
            {"line": m.line, "error": m.error} for m in parsed.malformed
        ],
    }
    _write_json(args.report, payload)
    return 0


def _cmd_score(args) -> int:
    config = _load_run_config(args.config)
    parsed = parse_visits(args.infile, schema=config.columns or None, delimiter=config.delimiter)
    hfrs = load_weight_table(args.hfrs_table) if args.hfrs_table else default_hfrs_table()
    charlson = (
        load_weight_table(args.charlson_table)
        if args.charlson_table
        else default_charlson_table()
    )
    labelled = label_visits(parsed.records, hfrs, charlson, config.cohort)
    extra = {
        "hfrs": [repr(label.hfrs) for _, label in labelled],
        "charlson": [str(label.charlson) for _, label in labelled],
        "frail": ["1" if label.frail else "0" for _, label in labelled],
    }
    write_visits_csv(args.out, [rec for rec, _ in labelled], extra=extra, delimiter=config.delimiter)
    return 0


def _cmd_bin(args) -> int:
    config = _load_run_config(args.config)
    labelled = read_labelled_csv(args.infile, delimiter=config.delimiter)
    period = None
    if config.study_start and config.study_end:
        from .timeseries import StudyPeriod

        period = StudyPeriod(config.study_start, config.study_end)
    frail_series, nonfrail_series = bin_hourly(labelled, period)
    write_counts_csv(args.out, [nonfrail_series, frail_series], delimiter=config.delimiter)
    if args.rates:
        import csv

        occ = slot_occurrences(frail_series.period)
        rho = {
            s.group: normalized_rates(s) for s in (frail_series, nonfrail_series)
        }
        with open(args.rates, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter=config.delimiter)
            writer.writerow(
                ["slot_index", "day", "hour", "gp_hours", "occurrences",
                 "rho_frail", "rho_non_frail"]
            )
            for i in range(N_SLOTS):
                slot = WeekSlot.from_index(i)
                writer.writerow(
                    [
                        i,
                        slot.day,
                        slot.hour,
                        "1" if gp_hours_flag(slot, config.gp_hours) else "0",
                        int(occ[i]),
                        repr(float(rho["frail"][i])),
                        repr(float(rho["non-frail"][i])),
                    ]
                )
    return 0


def _cmd_fit(args) -> int:
    config = _load_run_config(args.config)
    series = read_counts_csv(args.counts, delimiter=config.delimiter)
    payload = {}
    if args.select_orders:
        selection = select_orders(
            series, config.model.kw_search, config.model.kd_search, config.fit
        )
        k_weekly, k_daily = selection.k_weekly, selection.k_daily
        payload["selection"] = selection.to_dict()
    else:
        if args.kw is None or args.kd is None:
            raise CycleCountError("either pass --kw and --kd or use --select-orders")
        k_weekly, k_daily = args.kw, args.kd
    spec = FourierSpec(k_weekly, k_daily, frail_interaction=args.interaction)
    model = fit_poisson(build_design(series, spec), controls=config.fit)
    payload.update(model.summary())
    payload["dispersion"] = dispersion(model)
    _write_json(args.out, payload)
    return 0


def _cmd_compare(args) -> int:
    with open(args.model_a, encoding="utf-8") as fh:
        a = json.load(fh)
    with open(args.model_b, encoding="utf-8") as fh:
        b = json.load(fh)
    names_a = {c["name"] for c in a["coefficients"]}
    names_b = {c["name"] for c in b["coefficients"]}
    small, large = (a, b) if len(names_a) <= len(names_b) else (b, a)
    small_names = {c["name"] for c in small["coefficients"]}
    large_names = {c["name"] for c in large["coefficients"]}
    if not small_names <= large_names:
        raise NonNestedError("models are not nested")
    if small.get("data_hash") != large.get("data_hash"):
        raise NonNestedError("models were fitted on different data")
    result = nested_deviance_test(
        small["deviance"], large["deviance"], small["df_residual"], large["df_residual"]
    )
    _write_json(args.out, result.to_dict())
    return 0


def _cmd_complexity(args) -> int:
    config = _load_run_config(args.config)
    labelled = read_labelled_csv(args.infile, delimiter=config.delimiter)
    measures = tuple(args.measures.split(",")) if args.measures else config.complexity.measures
    tau = args.tau if args.tau is not None else config.complexity.tau_minutes
    results = []
    if args.by in ("cohort", "both"):
        frail = [p for p in labelled if p[1].frail]
        nonfrail = [p for p in labelled if not p[1].frail]
        results += compare_measures(
            frail, nonfrail, "frail", "non-frail", "cohort", measures, tau
        )
    if args.by in ("gp_hours", "both"):
        from .timeseries import week_slot_of

        def in_gp(pair) -> bool:
            return gp_hours_flag(week_slot_of(pair[0].arrival), config.gp_hours)

        subset = labelled
        if args.group != "all":
            want = args.group == "frail"
            subset = [p for p in labelled if p[1].frail == want]
        within = [p for p in subset if in_gp(p)]
        outside = [p for p in subset if not in_gp(p)]
        results += compare_measures(
            within,
            outside,
            f"{args.group} within GP hours",
            f"{args.group} outside GP hours",
            "gp_hours",
            measures,
            tau,
        )
    _write_json(args.out, results)
    return 0


def _cmd_simulate(args) -> int:
    if args.generator_config:
        config = GeneratorConfig.from_file(args.generator_config)
    else:
        config = paper_like_config()
    if args.seed is not None:
        config = GeneratorConfig.from_dict({**config.to_dict(), "seed": args.seed})
    data = simulate_arrivals(config)
    write_visits_csv(args.out, data.visits, extra={"true_group": data.groups})
    return 0


def _cmd_validate(args) -> int:
    if args.generator_config:
        config = GeneratorConfig.from_file(args.generator_config)
    else:
        config = paper_like_config()
    report = recovery_experiment(
        config,
        replicates=args.replicates,
        controls=FitControls(),
        run_selection=not args.skip_selection,
    )
    _write_json(args.out, report.to_dict())
    return 0


def _cmd_run(args) -> int:
    config = _load_run_config(args.config)
    report = run_pipeline(args.infile, config)
    paths = emit_report(report, args.out_dir, svg=args.svg)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyclecount",
        description="Cyclic arrival-count modelling for ED visit data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cleanse", help="parse and cleanse a visit file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="cleansing report JSON (stdout if omitted)")
    p.set_defaults(func=_cmd_cleanse)

    p = sub.add_parser("score", help="attach HFRS/Charlson scores and the frail flag")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--hfrs-table", default=None)
    p.add_argument("--charlson-table", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("bin", help="hourly counts per cohort plus the slot rate table")
    p.add_argument("--in", dest="infile", required=True, help="scored visit file")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="hourly counts CSV")
    p.add_argument("--rates", default=None, help="168-slot normalized rate CSV")
    p.set_defaults(func=_cmd_bin)

    p = sub.add_parser("fit", help="fit the Poisson harmonic regression")
    p.add_argument("--counts", required=True)
    p.add_argument("--kw", type=int, default=None, help="weekly harmonic order")
    p.add_argument("--kd", type=int, default=None, help="daily harmonic order")
    p.add_argument("--interaction", action="store_true", help="add frail-gated terms")
    p.add_argument("--select-orders", action="store_true", help="pick orders by AIC grid")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("compare", help="ANOVA between two nested model files")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("complexity", help="case-complexity hypothesis tests")
    p.add_argument("--in", dest="infile", required=True, help="scored visit file")
    p.add_argument("--by", choices=("cohort", "gp_hours", "both"), default="both")
    p.add_argument("--measures", default=None, help="comma list: admitted,triage,charlson,los")
    p.add_argument("--tau", type=float, default=None, help="RMST horizon in minutes")
    p.add_argument("--group", choices=("frail", "non-frail", "all"), default="frail",
                   help="cohort restricted to in the GP-hours comparison")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_complexity)

    p = sub.add_parser("simulate", help="draw a synthetic visit dataset")
    p.add_argument("--config", dest="generator_config", default=None,
                   help="generator config JSON (paper-like preset if omitted)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("validate", help="simulate-refit coverage experiment")
    p.add_argument("--config", dest="generator_config", default=None)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--skip-selection", action="store_true",
                   help="skip the AIC grid (much faster)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="full pipeline: cleanse through report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--svg", action="store_true", help="also render SVG figures")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CycleCountError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
