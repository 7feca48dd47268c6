"""Visit-record parsing and data cleansing.

Input files are UTF-8 delimited text with a header row. Malformed rows are
quarantined with their line number instead of aborting the parse, so partial
audits stay possible.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

from .config import CleanseConfig
from .errors import SchemaError

REQUIRED_COLUMNS = (
    "visit_id",
    "arrival",
    "departure",
    "age",
    "icd_admission",
    "icd_discharge",
    "mts",
    "admitted",
)

RULE_ORDER = ("dedupe", "non_positive_los", "excessive_los", "min_age", "no_diagnosis")

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class VisitRecord:
    """One ED visit. ICD codes carry their documentation stage."""

    visit_id: str
    arrival: datetime
    departure: datetime
    age: int
    icd_codes: tuple[tuple[str, str], ...]
    triage: int
    admitted: bool

    @property
    def los_minutes(self) -> float:
        return (self.departure - self.arrival).total_seconds() / 60.0


@dataclass(frozen=True)
class MalformedRow:
    line: int
    error: str


@dataclass
class ParseResult:
    records: list[VisitRecord]
    malformed: list[MalformedRow] = field(default_factory=list)


@dataclass
class CleanseReport:
    input_count: int
    retained_count: int
    removed_by_rule: dict[str, int]
    rule_order: tuple[str, ...] = RULE_ORDER

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "retained_count": self.retained_count,
            "removed_by_rule": dict(self.removed_by_rule),
            "rule_order": list(self.rule_order),
        }


def _parse_timestamp(text: str, column: str) -> datetime:
    try:
        ts = datetime.fromisoformat(text.strip())
    except ValueError:
        raise ValueError(f"unparseable {column} timestamp: {text!r}")
    # Wall-clock convention: any UTC offset is dropped, the clock reading stays.
    return ts.replace(tzinfo=None)


def _parse_codes(text: str, stage: str) -> list[tuple[str, str]]:
    return [(tok.strip(), stage) for tok in text.split(";") if tok.strip()]


def parse_row(row: dict[str, str]) -> VisitRecord:
    visit_id = (row["visit_id"] or "").strip()
    if not visit_id:
        raise ValueError("empty visit_id")
    arrival = _parse_timestamp(row["arrival"], "arrival")
    departure = _parse_timestamp(row["departure"], "departure")
    try:
        age = int(row["age"].strip())
    except (ValueError, AttributeError):
        raise ValueError(f"unparseable age: {row['age']!r}")
    try:
        triage = int(row["mts"].strip())
    except (ValueError, AttributeError):
        raise ValueError(f"unparseable mts triage code: {row['mts']!r}")
    if not 1 <= triage <= 5:
        raise ValueError(f"mts triage code out of range 1-5: {triage}")
    admitted_raw = (row["admitted"] or "").strip().lower()
    if admitted_raw in _TRUE:
        admitted = True
    elif admitted_raw in _FALSE:
        admitted = False
    else:
        raise ValueError(f"unparseable admitted flag: {row['admitted']!r}")
    codes = _parse_codes(row["icd_admission"] or "", "admission")
    codes += _parse_codes(row["icd_discharge"] or "", "discharge")
    return VisitRecord(
        visit_id=visit_id,
        arrival=arrival,
        departure=departure,
        age=age,
        icd_codes=tuple(codes),
        triage=triage,
        admitted=admitted,
    )


def parse_visits(
    source: str | Path | io.TextIOBase,
    schema: dict[str, str] | None = None,
    delimiter: str = ",",
) -> ParseResult:
    """Parse visit records from a delimited file or text stream.

    ``schema`` maps the canonical column names to the names actually used in
    the file header. Rows that fail to parse are collected in
    ``ParseResult.malformed`` with their line number.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return parse_visits(fh, schema=schema, delimiter=delimiter)

    mapping = dict(schema or {})
    reader = csv.DictReader(source, delimiter=delimiter)
    header = reader.fieldnames or []
    actual_names = {name: mapping.get(name, name) for name in REQUIRED_COLUMNS}
    missing = [actual for actual in actual_names.values() if actual not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(sorted(missing))}")

    result = ParseResult(records=[])
    for row in reader:
        canonical = {name: row.get(actual) for name, actual in actual_names.items()}
        try:
            if any(v is None for v in canonical.values()):
                raise ValueError("row has fewer fields than the header")
            result.records.append(parse_row(canonical))
        except ValueError as exc:
            result.malformed.append(MalformedRow(line=reader.line_num, error=str(exc)))
    return result


def _first_failure(record: VisitRecord, rules: CleanseConfig) -> str | None:
    los = record.los_minutes
    if los <= 0:
        return "non_positive_los"
    if los > rules.los_cap_minutes:
        return "excessive_los"
    if record.age < rules.min_age:
        return "min_age"
    if not record.icd_codes:
        return "no_diagnosis"
    return None


def cleanse(
    records: Sequence[VisitRecord],
    rules: CleanseConfig | None = None,
    rule_order: Iterable[str] = RULE_ORDER,
) -> tuple[list[VisitRecord], CleanseReport]:
    """Apply the cleansing rules and account for every input record.

    Rule order only affects which rule a multiply-failing record is attributed
    to; the retained set is order-independent. Duplicates share a visit_id and
    the first occurrence wins.
    """
    rules = rules or CleanseConfig()
    order = tuple(rule_order)
    if set(order) != set(RULE_ORDER):
        raise ValueError(f"rule_order must be a permutation of {RULE_ORDER}")
    removed = {name: 0 for name in order}

    checks = {
        "non_positive_los": lambda r: r.los_minutes <= 0,
        "excessive_los": lambda r: r.los_minutes > rules.los_cap_minutes,
        "min_age": lambda r: r.age < rules.min_age,
        "no_diagnosis": lambda r: not r.icd_codes,
    }

    seen: set[str] = set()
    retained: list[VisitRecord] = []
    for record in records:
        duplicate = record.visit_id in seen
        if not duplicate:
            seen.add(record.visit_id)
        attributed = None
        for name in order:
            if name == "dedupe":
                if duplicate:
                    attributed = name
                    break
            elif checks[name](record):
                attributed = name
                break
        if attributed is None:
            retained.append(record)
        else:
            removed[attributed] += 1

    report = CleanseReport(
        input_count=len(records),
        retained_count=len(retained),
        removed_by_rule=removed,
        rule_order=order,
    )
    return retained, report


def write_visits_csv(
    path: str | Path,
    records: Iterable[VisitRecord],
    extra: dict[str, Sequence[str]] | None = None,
    delimiter: str = ",",
) -> None:
    """Write records back out in the canonical input column layout."""
    extra = extra or {}
    header = list(REQUIRED_COLUMNS) + list(extra)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(header)
        for i, rec in enumerate(records):
            admission = ";".join(c for c, s in rec.icd_codes if s == "admission")
            discharge = ";".join(c for c, s in rec.icd_codes if s == "discharge")
            row = [
                rec.visit_id,
                rec.arrival.isoformat(timespec="minutes"),
                rec.departure.isoformat(timespec="minutes"),
                str(rec.age),
                admission,
                discharge,
                str(rec.triage),
                "1" if rec.admitted else "0",
            ]
            row += [str(extra[name][i]) for name in extra]
            writer.writerow(row)
