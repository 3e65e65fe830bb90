"""Audit-to-quiescence loop: scope per round, inspect, dedup, stop rule."""

from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

from . import synth
from .external import ExternalCommandSpec, build_request, run_external_batch
from .findings import DIMENSIONS, DefectCatalog, Finding, dedup, identity_key, sort_findings
from .inspectors import Scope, run_scopes
from .model import ReferenceRegistry, SpecCorpus, corpus_from_texts, load_corpus_dir

log = logging.getLogger(__name__)

STOP_KINDS = ("one_clean_pass", "two_consecutive_clean")
STOP_ALIASES = {"one_clean": "one_clean_pass", "two_clean": "two_consecutive_clean"}


class ExternalFailuresExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ScopeTemplate:
    mode: str
    cross_file_dimensions: frozenset | None = None
    note: str = ""

    @property
    def cross_lane(self) -> str:
        if self.mode == "per_file":
            return "No"
        dims = self.cross_file_dimensions
        if self.mode == "full_scope" or dims is None or "schema_alignment" in dims:
            return "Yes"
        return "Partial"

    def to_dict(self) -> dict:
        dims = self.cross_file_dimensions
        return {"mode": self.mode, "note": self.note,
                "cross_file_dimensions": None if dims is None else sorted(dims)}

    @classmethod
    def from_dict(cls, data: dict) -> "ScopeTemplate":
        dims = data.get("cross_file_dimensions")
        return cls(data["mode"], None if dims is None else frozenset(dims), data.get("note", ""))


_PER_FILE = ScopeTemplate("per_file", note="per-file pass")
_FULL = ScopeTemplate("full_scope", note="full-scope pass")

PRESETS = {
    "study": (
        _PER_FILE,
        _PER_FILE,
        ScopeTemplate("partial", frozenset({"label_conventions"}),
                      "contract-and-lane pairs; cross-file label checks"),
        ScopeTemplate("partial", frozenset({"label_conventions", "schema_alignment"}),
                      "producer-consumer groups; schema comparison added"),
        ScopeTemplate("partial", frozenset({"label_conventions", "schema_alignment"}),
                      "producer-consumer groups; schema comparison added"),
        _FULL,
    ),
    "locked": (_FULL,),
}


@dataclass(frozen=True)
class ScopePolicy:
    schedule: tuple[ScopeTemplate, ...]
    name: str = "custom"

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("scope schedule is empty")

    @classmethod
    def preset(cls, name: str) -> "ScopePolicy":
        return cls(PRESETS[name], name)

    def template_for(self, round_no: int) -> ScopeTemplate:
        if round_no < 1:
            raise ValueError("rounds start at 1")
        return self.schedule[min(round_no, len(self.schedule)) - 1]


@dataclass(frozen=True)
class CorpusLayout:
    """What scope expansion needs to know about a corpus."""

    paths: tuple[str, ...]
    contract: str | None
    schema_groups: tuple[frozenset, ...] = ()
    lane_count: int | None = None

    @classmethod
    def of(cls, corpus: SpecCorpus) -> "CorpusLayout":
        groups: dict[str, set] = {}
        for d in corpus.index.schemas:
            groups.setdefault(d.name, set()).add(d.path)
        return cls(
            corpus.paths,
            corpus.contract.path,
            tuple(frozenset(g) for _, g in sorted(groups.items()) if len(g) > 1),
            corpus.index.lane_count_decl,
        )

    @classmethod
    def from_paths(cls, paths) -> "CorpusLayout":
        paths = tuple(sorted(set(paths)))
        contract = next((p for p in paths if "CONTRACT" in p.upper()), None)
        return cls(paths, contract)


def expand_scope(template: ScopeTemplate, layout: CorpusLayout,
                 lane_count: int | None = None) -> list[Scope]:
    if template.mode == "per_file":
        return [Scope.single(p, lane_count) for p in layout.paths]
    if template.mode == "full_scope":
        return [Scope("full_scope", frozenset(layout.paths), True, None, lane_count)]
    dims = template.cross_file_dimensions
    groups: list[frozenset] = []
    lanes = [p for p in layout.paths if p != layout.contract]
    if layout.contract is not None:
        groups += [frozenset({layout.contract, p}) for p in lanes] or [frozenset({layout.contract})]
    else:
        groups += [frozenset({p}) for p in lanes]
    if dims is None or "schema_alignment" in dims:
        groups += [g for g in layout.schema_groups if g not in groups]
    return [Scope("partial", g, True, dims, lane_count) for g in groups]


def scope_for_round(policy: ScopePolicy, round_no: int, corpus: SpecCorpus,
                    lane_count: int | None = None) -> list[Scope]:
    layout = CorpusLayout.of(corpus)
    return expand_scope(policy.template_for(round_no), layout,
                        lane_count if lane_count is not None else layout.lane_count)


@dataclass(frozen=True)
class StopRule:
    kind: str = "one_clean_pass"

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise ValueError(f"unknown stop rule {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "StopRule":
        return cls(STOP_ALIASES.get(text, text))


@dataclass
class RoundReport:
    round: int
    template: ScopeTemplate
    scopes: list
    new_findings: list
    schema_violation_count: int = 0
    external_failures: int = 0
    duration: float = field(default=0.0, compare=False)  # milliseconds
    raw_findings: list = field(default_factory=list, compare=False, repr=False)

    @property
    def mode(self) -> str:
        return self.template.mode

    @property
    def clean(self) -> bool:
        return self.mode == "full_scope" and not self.new_findings

    @property
    def files_loaded(self) -> str:
        sizes = sorted({len(s.files) for s in self.scopes})
        if not sizes:
            return ""
        return str(sizes[0]) if len(sizes) == 1 else f"{sizes[0]}-{sizes[-1]}"

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "round": self.round,
            "scope_mode": self.mode,
            "files_loaded": self.files_loaded,
            "cross_lane": self.template.cross_lane,
            "notes": self.template.note,
            "new_findings": len(self.new_findings),
            "finding_ids": [f.id for f in self.new_findings],
            "schema_violation_count": self.schema_violation_count,
            "external_failures": self.external_failures,
            "clean": self.clean,
        }
        if include_timing:
            out["duration_ms"] = round(self.duration, 3)
        return out


def stop_check(rounds, rule: StopRule) -> bool:
    if not rounds:
        raise ValueError("stop_check needs at least one round")
    if rule.kind == "one_clean_pass":
        return rounds[-1].clean
    return len(rounds) >= 2 and rounds[-1].clean and rounds[-2].clean


@dataclass
class EngineConfig:
    policy: ScopePolicy = field(default_factory=lambda: ScopePolicy.preset("locked"))
    stop_rule: StopRule = field(default_factory=StopRule)
    dimensions: tuple[str, ...] = DIMENSIONS
    external: tuple[ExternalCommandSpec, ...] = ()
    round_cap: int = 50
    seed: int | None = None
    simulation: bool = False
    max_external_failures: int = 0
    # Expected lane count stated by the checklist; defaults to the contract's.
    lane_count: int | None = None
    run_metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scope": self.policy.name,
            "schedule": [t.to_dict() for t in self.policy.schedule],
            "stop": self.stop_rule.kind,
            "dimensions": list(self.dimensions),
            "external": [c.to_dict() for c in self.external],
            "round_cap": self.round_cap,
            "seed": self.seed,
            "simulation": self.simulation,
            "max_external_failures": self.max_external_failures,
            "lane_count": self.lane_count,
            "run_metadata": self.run_metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        if "schedule" in data and data.get("scope") in (None, "custom"):
            policy = ScopePolicy(tuple(ScopeTemplate.from_dict(t) for t in data["schedule"]))
        else:
            policy = ScopePolicy.preset(data.get("scope", "locked"))
        dims = tuple(data.get("dimensions", DIMENSIONS))
        unknown = set(dims) - set(DIMENSIONS)
        if unknown:
            raise ValueError(f"unknown dimensions: {sorted(unknown)}")
        return cls(
            policy=policy,
            stop_rule=StopRule.parse(data.get("stop", "one_clean_pass")),
            dimensions=dims,
            external=tuple(ExternalCommandSpec.from_dict(c) for c in data.get("external", [])),
            round_cap=int(data.get("round_cap", 50)),
            seed=data.get("seed"),
            simulation=bool(data.get("simulation", False)),
            max_external_failures=int(data.get("max_external_failures", 0)),
            lane_count=data.get("lane_count"),
            run_metadata=dict(data.get("run_metadata", {})),
        )

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class AuditSession:
    config: EngineConfig
    rounds: list = field(default_factory=list)
    catalog: DefectCatalog = field(default_factory=DefectCatalog)
    terminated: str = "aborted"  # converged | round_cap | aborted
    error: str = ""

    def to_dict(self, include_timing: bool | None = None) -> dict:
        if include_timing is None:
            include_timing = not self.config.simulation
        return {
            "config": self.config.to_dict(),
            "terminated": self.terminated,
            "error": self.error,
            "corpus_line_total": self.catalog.corpus_line_total,
            "rounds": [r.to_dict(include_timing) for r in self.rounds],
            "open_findings": [r.finding.id for r in self.catalog.unfixed()],
        }

    def to_json(self, include_timing: bool | None = None) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


class FindingSource(Protocol):
    def findings_for_round(self, round_no: int, scopes: list) -> list[Finding]: ...


def run_round(corpus: SpecCorpus | None, config: EngineConfig, round_no: int,
              catalog: DefectCatalog, registry: ReferenceRegistry | None = None,
              sources=(), layout: CorpusLayout | None = None) -> RoundReport:
    started = time.perf_counter()
    template = config.policy.template_for(round_no)
    if layout is None:
        layout = CorpusLayout.of(corpus) if corpus is not None else CorpusLayout((), None)
    lane_count = config.lane_count if config.lane_count is not None else layout.lane_count
    scopes = expand_scope(template, layout, lane_count)

    raw: list[Finding] = []
    violations = failures = 0
    if corpus is not None and config.dimensions:
        resolved = (registry or ReferenceRegistry()).resolve(corpus)
        raw += run_scopes(corpus, scopes, resolved, config.dimensions)
        for command in config.external:
            requests = [build_request(corpus, s, config.dimensions) for s in scopes]
            outcome = run_external_batch(requests, command)
            failures += len(outcome.failures)
            for msg in outcome.failures:
                log.warning("external inspector failed: %s", msg)
            for res in outcome.results:
                violations += res.schema_violations
                raw += res.findings
        if failures > config.max_external_failures:
            raise ExternalFailuresExceeded(
                f"round {round_no}: {failures} external failures "
                f"(limit {config.max_external_failures})"
            )
    for source in sources:
        raw += source.findings_for_round(round_no, scopes)

    merged, seen = [], set()
    for f in sort_findings(raw):
        key = identity_key(f)
        if key not in seen:
            seen.add(key)
            merged.append(f)
    new = [replace(f, id=f"R{round_no}-{i}")
           for i, f in enumerate(dedup(merged, catalog), start=1)]

    if template.mode == "full_scope" and corpus is not None:
        _reconcile(catalog, merged, round_no, config.dimensions)
    catalog.append(new, round_no)
    return RoundReport(
        round=round_no, template=template, scopes=scopes, new_findings=new,
        schema_violation_count=violations, external_failures=failures,
        duration=(time.perf_counter() - started) * 1000.0, raw_findings=merged,
    )


def _reconcile(catalog: DefectCatalog, seen_now: list[Finding], round_no: int, dims) -> None:
    """Open records a full-scope pass no longer reports were fixed before it."""
    present = {identity_key(f) for f in seen_now}
    for rec in catalog.unfixed():
        if rec.finding.dimension in dims and identity_key(rec.finding) not in present:
            catalog.mark_fixed(rec.finding.id, round_no - 1)


class CorpusProvider(Protocol):
    registry: ReferenceRegistry | None

    def load(self) -> SpecCorpus | None: ...

    def sources(self) -> list: ...

    def after_round(self, report: RoundReport, session: AuditSession) -> None: ...


class StaticProvider:
    """A corpus that never changes between rounds."""

    def __init__(self, corpus: SpecCorpus, registry: ReferenceRegistry | None = None):
        self.corpus = corpus
        self.registry = registry

    def load(self):
        return self.corpus

    def sources(self):
        return []

    def after_round(self, report, session):
        pass


class DirectoryProvider:
    """Re-reads a directory every round; an optional shell command runs
    between rounds to apply out-of-band fixes."""

    def __init__(self, root: str | Path, registry: ReferenceRegistry | None = None,
                 between_rounds: str | None = None):
        self.root = Path(root)
        self.registry = registry
        self.between_rounds = between_rounds

    def load(self):
        return load_corpus_dir(self.root)

    def sources(self):
        return []

    def after_round(self, report, session):
        if self.between_rounds:
            subprocess.run(self.between_rounds, shell=True, check=True, cwd=self.root)


class SimulationProvider:
    """Seeded corpus whose detected seeds are fixed between rounds."""

    def __init__(self, seeded: synth.SeededCorpus):
        self.files = dict(seeded.files)
        self.ground_truth = seeded.ground_truth
        self.registry = seeded.registry
        self.fixed_log: list[tuple[int, str]] = []

    def load(self):
        return corpus_from_texts(self.files)

    def sources(self):
        return []

    def after_round(self, report, session):
        detected = synth.seeds_detected(report.raw_findings, self.ground_truth, self.files)
        for seed_id in detected:
            self.files = synth.apply_fix(self.files, self.ground_truth, seed_id)
            self.fixed_log.append((report.round, seed_id))
        fixed_locs = {
            (s.path, s.line, s.category) for s in self.ground_truth.seeds if s.seed_id in detected
        }
        for rec in session.catalog.unfixed():
            f = rec.finding
            if (f.file, f.line, f.category) in fixed_locs:
                session.catalog.mark_fixed(f.id, report.round)


class ReplayProvider:
    """Replays a recorded catalog: round r emits exactly the rows found in r."""

    registry = None

    def __init__(self, catalog: DefectCatalog):
        self.recorded = catalog
        self.layout = CorpusLayout.from_paths(r.finding.file for r in catalog.records)

    def load(self):
        return None

    def sources(self):
        return [self]

    def findings_for_round(self, round_no, scopes):
        return [replace(r.finding, id="") for r in self.recorded.records if r.round == round_no]

    def after_round(self, report, session):
        fixed_keys = {
            identity_key(r.finding) for r in self.recorded.records
            if r.fixed_in_round == report.round
        }
        for rec in session.catalog.unfixed():
            if identity_key(rec.finding) in fixed_keys:
                session.catalog.mark_fixed(rec.finding.id, report.round)


def run_to_quiescence(provider, config: EngineConfig) -> AuditSession:
    session = AuditSession(config)
    layout = getattr(provider, "layout", None)
    for round_no in range(1, config.round_cap + 1):
        try:
            corpus = provider.load()
        except Exception as exc:  # provider failures end the session
            session.terminated, session.error = "aborted", f"round {round_no}: {exc}"
            return session
        if corpus is not None:
            session.catalog.corpus_line_total = corpus.line_total
        try:
            report = run_round(corpus, config, round_no, session.catalog,
                               provider.registry, provider.sources(), layout)
        except ExternalFailuresExceeded as exc:
            session.terminated, session.error = "aborted", str(exc)
            return session
        session.rounds.append(report)
        log.info("round %d: %d new findings (%s)", round_no, len(report.new_findings), report.mode)
        if stop_check(session.rounds, config.stop_rule):
            session.terminated = "converged"
            return session
        try:
            provider.after_round(report, session)
        except Exception as exc:
            session.terminated, session.error = "aborted", f"after round {round_no}: {exc}"
            return session
    session.terminated = "round_cap"
    return session


def replay_catalog(catalog: DefectCatalog, policy: ScopePolicy | None = None,
                   stop_rule: StopRule | None = None, round_cap: int = 50) -> AuditSession:
    """Re-run a recorded catalog through the loop (study schedule, one clean pass)."""
    config = EngineConfig(
        policy=policy or ScopePolicy.preset("study"),
        stop_rule=stop_rule or StopRule("one_clean_pass"),
        dimensions=(),
        round_cap=round_cap,
    )
    session = run_to_quiescence(ReplayProvider(catalog), config)
    session.catalog.corpus_line_total = catalog.corpus_line_total
    return session
