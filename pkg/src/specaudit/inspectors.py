"""Deterministic checklist inspectors over a built corpus.

Each inspector takes the corpus and a :class:`Scope` and returns coded
findings sorted by (file, line, dimension id, description). Checks that need
more than one file are skipped, not failed, when the scope disables
cross-file comparison for their dimension.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass

from .findings import DIMENSIONS, Finding, code_finding, identity_key, sort_findings
from .model import (
    ReferenceRegistry,
    ResolvedRefs,
    SpecCorpus,
    SpecFile,
    prose_lines,
    resolve_refs,
)

SCOPE_MODES = ("per_file", "partial", "full_scope")

NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}
_N = r"(\d+|" + "|".join(NUMBER_WORDS) + r")"
LANE_COUNT_RE = re.compile(rf"\b{_N}(?:\s+lanes\b|-lanes?\b)")
LANE_REF_RE = re.compile(r"\bLane\s+(\d+)\b")


@dataclass(frozen=True)
class Scope:
    mode: str
    files: frozenset
    cross_file_enabled: bool
    # Restricts cross-file checks to these dimensions; None means all.
    cross_file_dimensions: frozenset | None = None
    # Expected lane count supplied by the checklist, for file-local counting.
    lane_count: int | None = None

    def __post_init__(self):
        if self.mode not in SCOPE_MODES:
            raise ValueError(f"unknown scope mode {self.mode!r}")
        if self.mode == "per_file" and (len(self.files) != 1 or self.cross_file_enabled):
            raise ValueError("per_file scope is one file without cross-file checks")
        if self.mode == "full_scope" and not self.cross_file_enabled:
            raise ValueError("full_scope scope has cross-file checks enabled")

    def cross(self, dimension: str) -> bool:
        if not self.cross_file_enabled:
            return False
        return self.cross_file_dimensions is None or dimension in self.cross_file_dimensions

    @classmethod
    def full(cls, corpus: SpecCorpus, lane_count: int | None = None) -> "Scope":
        return cls("full_scope", frozenset(corpus.paths), True, None, lane_count)

    @classmethod
    def single(cls, path: str, lane_count: int | None = None) -> "Scope":
        return cls("per_file", frozenset([path]), False, None, lane_count)


def _finding(dimension: str, spec_path: str, line: int, description: str,
             fix: str = "", context: str = "") -> Finding:
    return code_finding(Finding(
        id="", file=spec_path, line=line, dimension=dimension,
        description=description, suggested_fix=fix, context=context,
    ))


def _in_scope(corpus: SpecCorpus, scope: Scope) -> list[SpecFile]:
    return [f for f in corpus.files if f.path in scope.files]


def inspect_version_consistency(corpus: SpecCorpus, scope: Scope) -> list[Finding]:
    dim = "version_consistency"
    out = []
    by_path = defaultdict(list)
    for v in corpus.index.versions:
        by_path[v.path].append(v)
    for spec in _in_scope(corpus, scope):
        decls = by_path.get(spec.path, [])
        front = next((v for v in decls if v.site == "front_matter"), None)
        compared = [v for v in decls if v.site == "footer"]
        head = next((v for v in decls if v.site == "changelog_entry"), None)
        if head is not None:
            compared.append(head)
        compared.sort(key=lambda v: v.line)
        reference = front or (compared[0] if compared else None)
        for v in compared:
            if v is reference or v.version == reference.version:
                continue
            where = "changelog head" if v.site == "changelog_entry" else "footer"
            origin = "front matter" if reference is front else f"line {reference.line}"
            out.append(_finding(
                dim, spec.path, v.line,
                f"{where} version v{v.version} differs from {origin} version {reference.version}",
                f"set the {where} version to {reference.version}",
                "changelog" if v.site == "changelog_entry" else "footer",
            ))
    if scope.cross(dim):
        have = {v.path for v in corpus.index.versions if v.site == "front_matter"}
        if have & scope.files:
            for spec in _in_scope(corpus, scope):
                if spec.path not in have:
                    out.append(_finding(
                        dim, spec.path, 1,
                        "front matter declares no version while other files do",
                        "add a 'version:' front-matter key", "front_matter",
                    ))
    return sort_findings(out)


def _first_decls(corpus: SpecCorpus):
    """First declaration per (file, name, direction); later duplicates are a
    same-file contradiction, not a cross-lane contract."""
    seen = set()
    out = []
    for d in corpus.index.schemas:
        key = (d.path, d.name, d.direction)
        if key in seen:
            continue
        seen.add(key)
        out.append(d)
    return out


def inspect_schema_alignment(corpus: SpecCorpus, scope: Scope) -> list[Finding]:
    dim = "schema_alignment"
    if not scope.cross(dim):
        return []
    out = []
    by_name = defaultdict(list)
    for d in _first_decls(corpus):
        by_name[d.name].append(d)
    for name, decls in sorted(by_name.items()):
        # Absence claims need every declaring file visible.
        if any(d.path not in scope.files for d in decls):
            continue
        producers = [d for d in decls if d.direction == "producer"]
        consumers = [d for d in decls if d.direction == "consumer"]
        if not consumers:
            continue
        if not producers:
            for c in consumers:
                out.append(_finding(
                    dim, c.path, c.line,
                    f"schema {name} is consumed but no lane produces it",
                    f"declare a producer for {name} or drop the consumer block",
                    "producerless_consumer",
                ))
            continue
        produced = {f for p in producers for f in p.fields}
        consumed = {f for c in consumers for f in c.fields}
        for c in consumers:
            for fname in c.fields:
                if fname not in produced:
                    out.append(_finding(
                        dim, c.path, c.line,
                        f"consumer of {name} expects field {fname} that no producer emits",
                        f"align {fname} with the producer field names",
                        "consumer_missing",
                    ))
        for p in producers:
            for fname in p.fields:
                if fname not in consumed:
                    out.append(_finding(
                        dim, p.path, p.line,
                        f"producer field {fname} of {name} is consumed by no lane",
                        f"drop {fname} or document its consumer",
                        "producer_unconsumed",
                    ))
    return sort_findings(out)


def inspect_permission_boundaries(corpus: SpecCorpus, resolved: ResolvedRefs | None,
                                  scope: Scope) -> list[Finding]:
    dim = "permission_boundaries"
    out = []
    if resolved is None:
        resolved = resolve_refs(corpus, ReferenceRegistry())
    authority = corpus.index.authority
    if scope.cross(dim) and authority is not None and authority.path in scope.files:
        for c in corpus.index.claims:
            if c.path not in scope.files:
                continue
            if c.action not in authority.grants.get(c.lane_id, frozenset()):
                out.append(_finding(
                    dim, c.path, c.line,
                    f"lane {c.lane_id} claims {c.action} but the authority table does not grant it",
                    f"remove the {c.action} claim or grant it in the contract",
                ))
    for r in resolved.refs:
        tok = r.token
        if r.status != "stale" or tok.path not in scope.files:
            continue
        what = "ticket" if tok.kind == "ticket_key" else "document reference"
        out.append(_finding(
            dim, tok.path, tok.line,
            f"stale {what} {tok.value}",
            f"replace or remove {tok.value}",
        ))
    return sort_findings(out)


def inspect_label_conventions(corpus: SpecCorpus, scope: Scope) -> list[Finding]:
    dim = "label_conventions"
    contract = corpus.contract
    if not scope.cross(dim) or contract.path not in scope.files:
        return []
    mandated: dict[str, list[str]] = defaultdict(list)
    for lab in corpus.index.labels:
        if lab.kind == "mandated" and lab.label not in mandated[lab.action]:
            mandated[lab.action].append(lab.label)
    every_mandated = {lab for labels in mandated.values() for lab in labels}
    out = []
    for spec in _in_scope(corpus, scope):
        if spec.role != "lane_prompt":
            continue
        used = [lab for lab in corpus.index.labels if lab.kind == "used" and lab.path == spec.path]
        used_pairs = {(lab.action, lab.label) for lab in used}
        claim_lines: dict[str, int] = {}
        for c in corpus.index.claims:
            if c.path == spec.path:
                claim_lines.setdefault(c.action, c.line)
        for action, line in claim_lines.items():
            for label in mandated.get(action, []):
                if (action, label) not in used_pairs:
                    out.append(_finding(
                        dim, spec.path, line,
                        f"lane {spec.lane_id} claims {action} but never applies mandated label {label}",
                        f"add label:{label} under action:{action}",
                    ))
        for lab in used:
            if lab.label not in every_mandated:
                out.append(_finding(
                    dim, spec.path, lab.line,
                    f"label {lab.label} is not mandated by the contract for any action",
                    f"use a contract label instead of {lab.label}",
                    "unmandated_label",
                ))
    return sort_findings(out)


def _expected_lane_count(corpus: SpecCorpus, scope: Scope) -> int | None:
    if scope.lane_count is not None:
        return scope.lane_count
    if scope.cross("lane_count_propagation") or corpus.contract.path in scope.files:
        return corpus.index.lane_count_decl
    return None


def inspect_lane_count(corpus: SpecCorpus, scope: Scope) -> list[Finding]:
    dim = "lane_count_propagation"
    expected = _expected_lane_count(corpus, scope)
    if expected is None:
        return []
    out = []
    for spec in _in_scope(corpus, scope):
        for n, text in prose_lines(spec):
            for m in LANE_COUNT_RE.finditer(text):
                raw = m.group(1)
                count = int(raw) if raw.isdigit() else NUMBER_WORDS[raw]
                if count != expected:
                    out.append(_finding(
                        dim, spec.path, n,
                        f"text cites {raw} lanes but the pipeline has {expected}",
                        f"update the lane count to {expected}",
                    ))
            for m in LANE_REF_RE.finditer(text):
                k = int(m.group(1))
                if k > expected:
                    out.append(_finding(
                        dim, spec.path, n,
                        f"reference to Lane {k} exceeds the declared {expected} lanes",
                        f"remove or renumber the Lane {k} reference",
                    ))
    for cov in corpus.index.coverage:
        if cov.path in scope.files and (cov.first != 1 or cov.last != expected):
            out.append(_finding(
                dim, cov.path, cov.line,
                f"coverage marker spans lanes {cov.first}-{cov.last}, expected 1-{expected}",
                f"extend coverage to lanes=1-{expected}",
            ))
    for block in corpus.index.blocks:
        if block.path in scope.files and block.kind in ("authority", "schedule"):
            extra = sorted(k for k in block.payload if k > expected)
            if extra:
                out.append(_finding(
                    dim, block.path, block.line,
                    f"{block.kind} block lists lanes {extra} beyond the declared {expected}",
                    "drop entries for lanes that do not exist",
                ))
    return sort_findings(out)


def inspect_cadence(corpus: SpecCorpus, scope: Scope) -> list[Finding]:
    dim = "cadence_alignment"
    schedule = corpus.index.schedule
    if not scope.cross(dim) or schedule is None or schedule.path not in scope.files:
        return []
    out = []
    for spec in _in_scope(corpus, scope):
        if spec.role != "lane_prompt":
            continue
        decl = corpus.index.cadences.get(spec.lane_id)
        planned = schedule.entries.get(spec.lane_id)
        lane_line = spec.front_matter_lines["lane"]
        if planned is None:
            out.append(_finding(
                dim, spec.path, decl.line if decl else lane_line,
                f"lane {spec.lane_id} is missing from the contract schedule",
                f"add lane {spec.lane_id} to the schedule block",
            ))
        elif decl is None:
            out.append(_finding(
                dim, spec.path, lane_line,
                f"lane {spec.lane_id} declares no cadence; schedule says {planned}",
                f"add 'cadence: {planned}' to the front matter",
            ))
        elif decl.cadence != planned:
            out.append(_finding(
                dim, spec.path, decl.line,
                f"cadence {decl.cadence} disagrees with scheduled {planned} for lane {spec.lane_id}",
                f"set cadence to {planned} or update the schedule",
            ))
    return sort_findings(out)


def inspect_contradictions(corpus: SpecCorpus, scope: Scope) -> list[Finding]:
    dim = "internal_contradiction"
    out = []
    first: dict[tuple, object] = {}
    for d in corpus.index.schemas:
        if d.path not in scope.files:
            continue
        key = (d.path, "schema", d.name, d.direction)
        if key not in first:
            first[key] = d
        elif set(d.fields) != set(first[key].fields):
            out.append(_finding(
                dim, d.path, d.line,
                f"{d.direction} {d.name} redeclared with fields {sorted(d.fields)} "
                f"(line {first[key].line} has {sorted(first[key].fields)})",
                "reconcile the two declarations",
            ))
    for b in corpus.index.blocks:
        if b.path not in scope.files or b.kind not in ("authority", "schedule"):
            continue
        key = (b.path, b.kind)
        if key not in first:
            first[key] = b
        elif b.payload != first[key].payload:
            out.append(_finding(
                dim, b.path, b.line,
                f"{b.kind} block disagrees with the one at line {first[key].line}",
                "reconcile the two blocks",
            ))
    for v in corpus.index.versions:
        if v.path not in scope.files or v.site != "footer":
            continue
        key = (v.path, "footer")
        if key not in first:
            first[key] = v
        elif v.version != first[key].version:
            out.append(_finding(
                dim, v.path, v.line,
                f"footer version v{v.version} contradicts footer v{first[key].version} "
                f"at line {first[key].line}",
                "use one version across footers",
            ))
    return sort_findings(out)


def run_inspectors(corpus: SpecCorpus, scope: Scope, resolved: ResolvedRefs | None = None,
                   dimensions=None) -> list[Finding]:
    """All enabled deterministic inspectors under one scope."""
    enabled = DIMENSIONS if dimensions is None else tuple(dimensions)
    out: list[Finding] = []
    for dim in enabled:
        if dim == "permission_boundaries":
            out += inspect_permission_boundaries(corpus, resolved, scope)
        else:
            out += INSPECTORS[dim](corpus, scope)
    return sort_findings(out)


def run_scopes(corpus: SpecCorpus, scopes, resolved: ResolvedRefs | None = None,
               dimensions=None) -> list[Finding]:
    """Concatenate findings over sub-scopes, collapsing identical repeats."""
    seen = set()
    out = []
    for scope in scopes:
        for f in run_inspectors(corpus, scope, resolved, dimensions):
            key = identity_key(f)
            if key not in seen:
                seen.add(key)
                out.append(f)
    return sort_findings(out)


INSPECTORS = {
    "version_consistency": inspect_version_consistency,
    "schema_alignment": inspect_schema_alignment,
    "label_conventions": inspect_label_conventions,
    "lane_count_propagation": inspect_lane_count,
    "cadence_alignment": inspect_cadence,
    "internal_contradiction": inspect_contradictions,
}
