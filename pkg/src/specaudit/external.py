"""Run an external process (e.g. an LLM runner) as an extra inspector.

One JSON request document goes to the child's stdin; one JSON response
``{"findings": [...], "notes": "..."}`` is read from its stdout. Each
invocation is stateless and has a wall-clock timeout; there is no retry.
"""

from __future__ import annotations

import json
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .findings import (
    CATEGORIES,
    DIMENSIONS,
    FINDING_FIELDS,
    SEVERITIES,
    Finding,
    UnknownDimension,
    classify,
    dimension_name,
    grade_severity,
    sort_findings,
)
from .inspectors import Scope
from .model import SpecCorpus

PROTOCOL_VERSION = "1"
FINDING_SCHEMA_VERSION = "1"


class ExternalInspectorError(RuntimeError):
    pass


class SpawnFailure(ExternalInspectorError):
    pass


class Timeout(ExternalInspectorError):
    pass


@dataclass(frozen=True)
class ExternalCommandSpec:
    argv: tuple[str, ...]
    timeout: float = 300.0
    max_parallel: int = 1
    name: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "ExternalCommandSpec":
        argv = [data["executable"], *data.get("args", [])]
        return cls(
            argv=tuple(str(a) for a in argv),
            timeout=float(data.get("timeout", 300.0)),
            max_parallel=int(data.get("max_parallel", 1)),
            name=str(data.get("name", "")),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "executable": self.argv[0],
            "args": list(self.argv[1:]),
            "timeout": self.timeout,
            "max_parallel": self.max_parallel,
        }


@dataclass(frozen=True)
class ExternalResult:
    findings: tuple[Finding, ...]
    schema_violations: int = 0
    notes: str = ""


def build_request(corpus: SpecCorpus, scope: Scope, checklist=DIMENSIONS) -> dict:
    files = [
        {"path": f.path, "contents": f.serialize()}
        for f in corpus.files if f.path in scope.files
    ]
    return {
        "protocol_version": PROTOCOL_VERSION,
        "scope": {
            "mode": scope.mode,
            "files": sorted(scope.files),
            "cross_file_enabled": scope.cross_file_enabled,
        },
        "files": files,
        "checklist": list(checklist),
        "finding_schema_version": FINDING_SCHEMA_VERSION,
    }


def _coerce(record, line_counts: dict) -> Finding | None:
    """Validate one response record; None means a schema violation."""
    if not isinstance(record, dict) or any(k not in record for k in FINDING_FIELDS):
        return None
    text_fields = ("id", "file", "description", "suggested_fix", "uncertainty")
    if any(not isinstance(record[k], str) for k in text_fields):
        return None
    line = record["line"]
    if isinstance(line, bool) or not isinstance(line, int) or line < 1:
        return None
    if record["file"] not in line_counts or line > line_counts[record["file"]]:
        return None
    try:
        dim = dimension_name(record["dimension"])
    except UnknownDimension:
        return None
    notes = [record["uncertainty"]] if record["uncertainty"] else []
    finding = Finding(
        id=record["id"], file=record["file"], line=line, dimension=dim,
        description=record["description"], suggested_fix=record["suggested_fix"],
    )
    category = record["category"]
    if category in CATEGORIES:
        finding = replace(finding, category=category)
    else:
        finding = replace(finding, category=classify(finding))
        notes.append(f"category {category!r} outside taxonomy; coded by detecting dimension")
    severity = record["severity"]
    if severity not in SEVERITIES:
        severity = grade_severity(finding)
        notes.append(f"severity {record['severity']!r} outside rubric; graded by rule")
    return replace(finding, severity=severity, uncertainty="; ".join(notes))


def parse_response(stdout: str, request: dict) -> ExternalResult:
    line_counts = {
        f["path"]: len(f["contents"].splitlines()) for f in request.get("files", [])
    }
    try:
        doc = json.loads(stdout)
    except ValueError:
        return ExternalResult((), 1, "")
    if not isinstance(doc, dict) or not isinstance(doc.get("findings"), list):
        return ExternalResult((), 1, "")
    kept, bad = [], 0
    for record in doc["findings"]:
        f = _coerce(record, line_counts)
        if f is None:
            bad += 1
        else:
            kept.append(f)
    notes = doc.get("notes", "")
    return ExternalResult(tuple(sort_findings(kept)), bad, notes if isinstance(notes, str) else "")


def run_external_inspector(request: dict, command: ExternalCommandSpec) -> ExternalResult:
    try:
        proc = subprocess.run(
            list(command.argv),
            input=json.dumps(request),
            capture_output=True,
            text=True,
            timeout=command.timeout,
        )
    except subprocess.TimeoutExpired as exc:
        raise Timeout(f"{command.argv[0]} exceeded {command.timeout}s") from exc
    except OSError as exc:
        raise SpawnFailure(f"{command.argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        raise SpawnFailure(
            f"{command.argv[0]} exited {proc.returncode}: {proc.stderr.strip()[:200]}"
        )
    return parse_response(proc.stdout, request)


@dataclass
class BatchOutcome:
    results: list = field(default_factory=list)  # ExternalResult per successful call
    failures: list = field(default_factory=list)  # error messages


def run_external_batch(requests: list[dict], command: ExternalCommandSpec) -> BatchOutcome:
    """Run one command over several requests, at most ``max_parallel`` at a time."""
    outcome = BatchOutcome()
    workers = max(1, command.max_parallel)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_external_inspector, r, command) for r in requests]
        for fut in futures:
            try:
                outcome.results.append(fut.result())
            except ExternalInspectorError as exc:
                outcome.failures.append(str(exc))
    return outcome
