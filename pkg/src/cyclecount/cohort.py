"""ICD-10 based cohort scoring and frail/non-frail classification.

Weight tables are plain CSV configuration (prefix, category, weight); the
package ships defaults for the two published scores but any table with the
same layout can be swapped in. Matching is longest-prefix on normalized codes
and every category is counted at most once per visit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .config import CohortConfig
from .ingest import VisitRecord

FRAIL = "frail"
NON_FRAIL = "non-frail"


def normalize_code(code: str) -> str:
    """Uppercase and strip dots/whitespace so table prefixes apply."""
    return code.replace(".", "").replace(" ", "").strip().upper()


@dataclass(frozen=True)
class WeightTable:
    name: str
    entries: dict[str, tuple[float, str]]  # prefix -> (weight, category)

    def __post_init__(self):
        lengths = sorted({len(p) for p in self.entries}, reverse=True)
        object.__setattr__(self, "_lengths", tuple(lengths))
        by_category: dict[str, float] = {}
        for prefix, (weight, category) in self.entries.items():
            if not prefix:
                raise ValueError(f"{self.name}: empty prefix")
            if not math.isfinite(weight):
                raise ValueError(f"{self.name}: non-finite weight for {prefix}")
            if by_category.setdefault(category, weight) != weight:
                raise ValueError(
                    f"{self.name}: category {category!r} has conflicting weights"
                )

    def match(self, code: str) -> tuple[float, str] | None:
        """Longest-prefix lookup of a normalized code."""
        for length in self._lengths:  # type: ignore[attr-defined]
            if length > len(code):
                continue
            hit = self.entries.get(code[:length])
            if hit is not None:
                return hit
        return None

    def score(self, codes: Iterable[str]) -> float:
        """Sum of weights over the distinct categories the codes match."""
        seen: set[str] = set()
        total = 0.0
        for code in codes:
            hit = self.match(normalize_code(code))
            if hit is None:
                continue
            weight, category = hit
            if category not in seen:
                seen.add(category)
                total += weight
        return total


def load_weight_table(source: str | Path, name: str | None = None) -> WeightTable:
    """Read a prefix/category/weight CSV into a WeightTable."""
    entries: dict[str, tuple[float, str]] = {}
    with open(source, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"prefix", "category", "weight"}
        if not required <= set(reader.fieldnames or []):
            raise ValueError(f"weight table needs columns {sorted(required)}")
        for row in reader:
            prefix = normalize_code(row["prefix"])
            if prefix in entries:
                raise ValueError(f"duplicate prefix {prefix!r} in weight table")
            entries[prefix] = (float(row["weight"]), row["category"].strip())
    return WeightTable(name=name or str(source), entries=entries)


def _packaged_table(filename: str, name: str) -> WeightTable:
    with resources.as_file(
        resources.files("cyclecount.data").joinpath(filename)
    ) as path:
        return load_weight_table(path, name=name)


def default_hfrs_table() -> WeightTable:
    return _packaged_table("hfrs_weights.csv", "hfrs")


def default_charlson_table() -> WeightTable:
    return _packaged_table("charlson_weights.csv", "charlson")


def hfrs_score(codes: Iterable[str], table: WeightTable) -> float:
    """Frailty risk score: weight sum over distinct matched categories."""
    return table.score(codes)


def charlson_score(codes: Iterable[str], table: WeightTable) -> int:
    """Comorbidity score; weights are integral so the sum is returned as int."""
    total = table.score(codes)
    return int(round(total))


def classify_frail(age: int, hfrs: float, config: CohortConfig | None = None) -> bool:
    """Frail iff both thresholds are met; 'at least' is inclusive on both."""
    config = config or CohortConfig()
    return age >= config.frail_age_min and hfrs >= config.hfrs_threshold


@dataclass(frozen=True)
class CohortLabel:
    frail: bool
    hfrs: float
    charlson: int
    age: int

    @property
    def group(self) -> str:
        return FRAIL if self.frail else NON_FRAIL


def label_visit(
    record: VisitRecord,
    hfrs_table: WeightTable,
    charlson_table: WeightTable,
    config: CohortConfig | None = None,
) -> CohortLabel:
    """Score one visit, pooling admission and discharge codes."""
    codes = [code for code, _stage in record.icd_codes]
    hfrs = hfrs_score(codes, hfrs_table)
    charlson = charlson_score(codes, charlson_table)
    return CohortLabel(
        frail=classify_frail(record.age, hfrs, config),
        hfrs=hfrs,
        charlson=charlson,
        age=record.age,
    )


def label_visits(
    records: Iterable[VisitRecord],
    hfrs_table: WeightTable | None = None,
    charlson_table: WeightTable | None = None,
    config: CohortConfig | None = None,
) -> list[tuple[VisitRecord, CohortLabel]]:
    hfrs_table = hfrs_table or default_hfrs_table()
    charlson_table = charlson_table or default_charlson_table()
    return [
        (rec, label_visit(rec, hfrs_table, charlson_table, config))
        for rec in records
    ]
