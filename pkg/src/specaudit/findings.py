"""Finding records, taxonomy coding, severity rubric, dedup and agreement."""

from __future__ import annotations

import csv
import io
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

DIMENSIONS: tuple[str, ...] = (
    "version_consistency",
    "schema_alignment",
    "permission_boundaries",
    "label_conventions",
    "lane_count_propagation",
    "cadence_alignment",
    "internal_contradiction",
)

# Table order used by every report.
CATEGORIES: tuple[str, ...] = (
    "version_drift",
    "stale_jira_refs",
    "cross_lane_schema",
    "missing_extension",
    "label_contract",
    "semantic_text",
    "formula_timing",
)

SEVERITIES: tuple[str, ...] = ("high", "medium", "low")

FINDING_FIELDS: tuple[str, ...] = (
    "id",
    "file",
    "line",
    "dimension",
    "category",
    "severity",
    "description",
    "suggested_fix",
    "uncertainty",
)

CATALOG_COLUMNS: tuple[str, ...] = (
    "id",
    "round",
    "file",
    "line",
    "dimension",
    "category",
    "severity",
    "description",
    "suggested_fix",
    "uncertainty",
    "fixed_in_round",
)

_DIMENSION_TO_CATEGORY = {
    "version_consistency": "version_drift",
    "schema_alignment": "cross_lane_schema",
    "permission_boundaries": "stale_jira_refs",
    "label_conventions": "label_contract",
    "lane_count_propagation": "missing_extension",
    "cadence_alignment": "formula_timing",
    "internal_contradiction": "semantic_text",
}


class UnknownDimension(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class CatalogFormatError(ValueError):
    pass


def dimension_name(value: int | str) -> str:
    """Normalize a dimension given as id (1-7, int or digit string) or name."""
    if isinstance(value, bool):
        raise UnknownDimension(repr(value))
    if isinstance(value, int):
        if 1 <= value <= len(DIMENSIONS):
            return DIMENSIONS[value - 1]
        raise UnknownDimension(str(value))
    text = str(value).strip()
    if text.isdigit():
        return dimension_name(int(text))
    if text in DIMENSIONS:
        return text
    raise UnknownDimension(text)


def dimension_id(value: int | str) -> int:
    return DIMENSIONS.index(dimension_name(value)) + 1


@dataclass(frozen=True)
class Finding:
    id: str
    file: str
    line: int
    dimension: str
    category: str = ""
    severity: str = ""
    description: str = ""
    suggested_fix: str = ""
    uncertainty: str = ""
    # Rubric hint from the emitting check (e.g. "footer", "consumer_missing").
    # Not part of the wire record.
    context: str = field(default="", compare=False, repr=False)

    def to_record(self) -> dict:
        return {name: getattr(self, name) for name in FINDING_FIELDS}

    def sort_key(self) -> tuple:
        return (self.file, self.line, dimension_id(self.dimension), self.description)


def sort_findings(findings: Iterable[Finding]) -> list[Finding]:
    return sorted(findings, key=Finding.sort_key)


def classify(finding: Finding, detection_dimension: int | str | None = None) -> str:
    """Category for a finding: supplied categories pass through, otherwise
    the category of the dimension that detected it."""
    if finding.category:
        return finding.category
    dim = finding.dimension if detection_dimension is None else detection_dimension
    return _DIMENSION_TO_CATEGORY[dimension_name(dim)]


def grade_severity(finding: Finding, context: str | None = None) -> str:
    if finding.severity:
        return finding.severity
    ctx = finding.context if context is None else context
    category = classify(finding)
    if category == "cross_lane_schema":
        return "low" if ctx == "producer_unconsumed" else "high"
    if category == "version_drift":
        return "medium" if ctx == "front_matter" else "low"
    if category == "label_contract" and ctx == "unmandated_label":
        return "low"
    return "medium"


def code_finding(finding: Finding) -> Finding:
    """Fill category and severity from the fallback map and rubric."""
    category = classify(finding)
    coded = replace(finding, category=category)
    return replace(coded, severity=grade_severity(coded))


_WS = re.compile(r"\s+")


def normalize_description(text: str) -> str:
    return _WS.sub(" ", text.strip().lower())


def identity_key(finding: Finding) -> tuple[str, int, str, str]:
    return (
        finding.file,
        finding.line,
        dimension_name(finding.dimension),
        normalize_description(finding.description),
    )


@dataclass
class CatalogRecord:
    finding: Finding
    round: int
    fixed_in_round: int | None = None

    @property
    def fixed(self) -> bool:
        return self.fixed_in_round is not None


@dataclass
class DefectCatalog:
    records: list[CatalogRecord] = field(default_factory=list)
    corpus_line_total: int | None = None
    # Highest round that contributed (possibly zero findings).
    rounds_completed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_round(self) -> int:
        last = max((r.round for r in self.records), default=0)
        return max(last, self.rounds_completed)

    def ids(self) -> set[str]:
        return {r.finding.id for r in self.records}

    def append(self, findings: Sequence[Finding], round_no: int) -> None:
        if self.records and round_no < self.records[-1].round:
            raise ValueError("catalog rounds must be non-decreasing")
        taken = self.ids()
        for f in findings:
            if f.id in taken:
                raise ValueError(f"duplicate finding id {f.id}")
            taken.add(f.id)
            self.records.append(CatalogRecord(f, round_no))
        self.rounds_completed = max(self.rounds_completed, round_no)

    def mark_fixed(self, finding_id: str, round_no: int) -> None:
        for rec in self.records:
            if rec.finding.id == finding_id:
                if round_no < rec.round:
                    raise ValueError("fixed_in_round precedes discovery round")
                rec.fixed_in_round = round_no
                return
        raise KeyError(finding_id)

    def unfixed(self) -> list[CatalogRecord]:
        return [r for r in self.records if not r.fixed]

    def findings(self) -> list[Finding]:
        return [r.finding for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CATALOG_COLUMNS)
        for rec in self.records:
            f = rec.finding
            writer.writerow([
                f.id, rec.round, f.file, f.line, f.dimension, f.category,
                f.severity, f.description, f.suggested_fix, f.uncertainty,
                "" if rec.fixed_in_round is None else rec.fixed_in_round,
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path: str | Path, corpus_line_total: int | None = None) -> "DefectCatalog":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_csv_text(text, corpus_line_total)

    @classmethod
    def from_csv_text(cls, text: str, corpus_line_total: int | None = None) -> "DefectCatalog":
        reader = csv.DictReader(io.StringIO(text, newline=""))
        if tuple(reader.fieldnames or ()) != CATALOG_COLUMNS:
            raise CatalogFormatError(f"unexpected header: {reader.fieldnames}")
        catalog = cls(corpus_line_total=corpus_line_total)
        rows = []
        for n, row in enumerate(reader, start=2):
            try:
                finding = Finding(
                    id=row["id"],
                    file=row["file"],
                    line=int(row["line"]),
                    dimension=dimension_name(row["dimension"]),
                    category=row["category"],
                    severity=row["severity"],
                    description=row["description"],
                    suggested_fix=row["suggested_fix"],
                    uncertainty=row["uncertainty"],
                )
                round_no = int(row["round"])
                fixed = int(row["fixed_in_round"]) if row["fixed_in_round"] else None
            except (ValueError, TypeError) as exc:
                raise CatalogFormatError(f"row {n}: {exc}") from exc
            if finding.category not in CATEGORIES:
                raise CatalogFormatError(f"row {n}: unknown category {finding.category!r}")
            if finding.severity not in SEVERITIES:
                raise CatalogFormatError(f"row {n}: unknown severity {finding.severity!r}")
            rows.append((round_no, finding, fixed))
        for n, (round_no, finding, fixed) in enumerate(rows, start=2):
            try:
                catalog.append([finding], round_no)
                if fixed is not None:
                    catalog.mark_fixed(finding.id, fixed)
            except ValueError as exc:
                raise CatalogFormatError(f"row {n}: {exc}") from exc
        return catalog


def dedup(new_findings: Iterable[Finding], catalog: DefectCatalog) -> list[Finding]:
    """Findings whose identity key matches no unfixed catalog record.

    A key that only matches fixed records is a regression and counts as new.
    Repeats inside ``new_findings`` collapse to their first occurrence.
    """
    open_keys = {identity_key(r.finding) for r in catalog.records if not r.fixed}
    out = []
    for f in new_findings:
        key = identity_key(f)
        if key in open_keys:
            continue
        open_keys.add(key)
        out.append(f)
    return out


def cohen_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> float:
    if len(labels_a) != len(labels_b):
        raise LengthMismatch(f"{len(labels_a)} != {len(labels_b)}")
    n = len(labels_a)
    if n == 0:
        raise EmptyInput("no labels")
    p_o = Fraction(sum(1 for a, b in zip(labels_a, labels_b) if a == b), n)
    count_a, count_b = Counter(labels_a), Counter(labels_b)
    p_e = sum((Fraction(count_a[k] * count_b[k], n * n) for k in count_a), Fraction(0))
    if p_e == 1:
        return 1.0 if p_o == 1 else 0.0
    return float((p_o - p_e) / (1 - p_e))
