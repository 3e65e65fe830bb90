"""Parse annotated-markdown specification files and index their declarations.

File convention
---------------
Each file opens with a ``---`` delimited front-matter block of ``key: value``
pairs. ``contract: true`` marks the shared contract, ``lane: N`` a lane prompt.
Machine-readable anchors in the body:

* fenced blocks with info strings ``json aegis:schema role=<producer|consumer>
  name=<id>``, ``aegis:labels action=<a>``, ``json aegis:authority`` and
  ``json aegis:schedule``;
* ``label:<token>``, ``action:<a>``, ``claims:<a>`` and ``covers: lanes=A-B``
  tokens in prose;
* ticket keys (``PROJ-123``) and ``[[ref: target]]`` document references;
* footers ending (or starting) with ``vX.Y.Z`` and ``## Changelog`` sections
  with ``- vX.Y.Z:`` entries, newest first.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

ACTIONS = ("create", "comment", "transition")

VERSION_RE = re.compile(r"^\d+\.\d+\.\d+$")
FOOTER_RE = re.compile(r"^v(\d+\.\d+\.\d+)\b|\bv(\d+\.\d+\.\d+)\s*$")
CHANGELOG_ENTRY_RE = re.compile(r"^\s*-\s+v(\d+\.\d+\.\d+):")
HEADING_RE = re.compile(r"^#{1,6}\s")
FENCE_RE = re.compile(r"^\s*```(.*)$")
TICKET_RE = re.compile(r"\b[A-Z][A-Z0-9]+-[0-9]+\b")
DOC_REF_RE = re.compile(r"\[\[ref:\s*([^\]]+?)\s*\]\]")
LABEL_RE = re.compile(r"\blabel:([A-Za-z0-9_.-]+)")
ACTION_RE = re.compile(r"\baction:(create|comment|transition)\b")
CLAIM_RE = re.compile(r"\bclaims:(create|comment|transition)\b")
COVERS_RE = re.compile(r"\bcovers:\s*lanes=(\d+)-(\d+)\b")


class SpecError(ValueError):
    pass


class MalformedFrontMatter(SpecError):
    pass


class MissingRoleKey(SpecError):
    pass


class BadLaneId(SpecError):
    pass


class NoContract(SpecError):
    pass


class DuplicateContract(SpecError):
    pass


class DuplicateLaneId(SpecError):
    pass


class MalformedSchemaBlock(SpecError):
    pass


class RegistryUnreadable(SpecError):
    pass


@dataclass(frozen=True)
class SpecFile:
    path: str
    role: str  # "lane_prompt" | "shared_contract"
    lane_id: int | None
    front_matter: dict
    front_matter_lines: dict  # key -> 1-based line number
    lines: tuple[str, ...]  # raw lines, line endings kept
    body_start: int  # 1-based number of the first body line

    @property
    def line_count(self) -> int:
        return len(self.lines)

    @property
    def body_lines(self) -> list[tuple[int, str]]:
        return [(n, self.text(n)) for n in range(self.body_start, len(self.lines) + 1)]

    def text(self, line: int) -> str:
        return self.lines[line - 1].rstrip("\r\n")

    def serialize(self) -> str:
        return "".join(self.lines)


def _parse_scalar(raw: str):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        return [item.strip() for item in inner.split(",")] if inner else []
    return raw


def parse_spec_file(text: str, path: str) -> SpecFile:
    lines = tuple(text.splitlines(keepends=True))
    front: dict = {}
    front_lines: dict = {}
    body_start = 1
    if lines and lines[0].strip() == "---":
        for idx in range(1, len(lines)):
            raw = lines[idx].rstrip("\r\n")
            if raw.strip() == "---":
                body_start = idx + 2
                break
            if not raw.strip():
                continue
            key, sep, value = raw.partition(":")
            key = key.strip()
            if not sep or not key:
                raise MalformedFrontMatter(f"{path}:{idx + 1}: expected 'key: value'")
            if key in front:
                raise MalformedFrontMatter(f"{path}:{idx + 1}: duplicate key {key!r}")
            front[key] = _parse_scalar(value)
            front_lines[key] = idx + 1
        else:
            raise MalformedFrontMatter(f"{path}: unterminated front matter")

    is_contract = str(front.get("contract", "")).lower() in ("true", "yes", "1")
    if is_contract and "lane" in front:
        raise MalformedFrontMatter(f"{path}: both 'contract' and 'lane' keys present")
    if is_contract:
        role, lane_id = "shared_contract", None
    elif "lane" in front:
        raw = front["lane"]
        if not isinstance(raw, str) or not re.fullmatch(r"[+-]?\d+", raw) or int(raw) <= 0:
            raise BadLaneId(f"{path}: lane id {raw!r} is not a positive integer")
        role, lane_id = "lane_prompt", int(raw)
    else:
        raise MissingRoleKey(f"{path}: front matter needs 'contract' or 'lane'")
    return SpecFile(path, role, lane_id, front, front_lines, lines, body_start)


# ---------------------------------------------------------------------------
# declaration index


@dataclass(frozen=True)
class VersionDecl:
    path: str
    line: int
    site: str  # front_matter | footer | changelog_entry
    version: str


@dataclass(frozen=True)
class SchemaDecl:
    path: str
    line: int
    name: str
    direction: str  # producer | consumer
    fields: tuple[str, ...]


@dataclass(frozen=True)
class RefToken:
    path: str
    line: int
    kind: str  # ticket_key | doc_ref
    value: str


@dataclass(frozen=True)
class LabelDecl:
    path: str
    line: int
    kind: str  # mandated | used
    action: str
    label: str


@dataclass(frozen=True)
class AuthorityTable:
    path: str
    line: int
    grants: dict  # lane_id -> frozenset of actions


@dataclass(frozen=True)
class ScheduleTable:
    path: str
    line: int
    entries: dict  # lane_id -> cadence


@dataclass(frozen=True)
class CadenceDecl:
    path: str
    line: int
    lane_id: int
    cadence: str


@dataclass(frozen=True)
class ClaimDecl:
    path: str
    line: int
    lane_id: int
    action: str


@dataclass(frozen=True)
class CoverageDecl:
    path: str
    line: int
    first: int
    last: int


@dataclass(frozen=True)
class Block:
    """An ``aegis:`` annotated fenced block."""

    path: str
    line: int
    kind: str  # schema | labels | authority | schedule
    attrs: dict
    payload: object


@dataclass(frozen=True)
class DeclarationIndex:
    versions: tuple[VersionDecl, ...] = ()
    schemas: tuple[SchemaDecl, ...] = ()
    refs: tuple[RefToken, ...] = ()
    labels: tuple[LabelDecl, ...] = ()
    authority: AuthorityTable | None = None
    schedule: ScheduleTable | None = None
    lane_count_decl: int | None = None
    cadences: dict = field(default_factory=dict)  # lane_id -> CadenceDecl
    changelog_heads: dict = field(default_factory=dict)  # path -> version
    claims: tuple[ClaimDecl, ...] = ()
    coverage: tuple[CoverageDecl, ...] = ()
    blocks: tuple[Block, ...] = ()


@dataclass(frozen=True)
class SpecCorpus:
    files: tuple[SpecFile, ...]
    index: DeclarationIndex

    @property
    def paths(self) -> tuple[str, ...]:
        return tuple(f.path for f in self.files)

    @property
    def contract(self) -> SpecFile:
        return next(f for f in self.files if f.role == "shared_contract")

    @property
    def line_total(self) -> int:
        return sum(f.line_count for f in self.files)

    def file(self, path: str) -> SpecFile:
        for f in self.files:
            if f.path == path:
                return f
        raise KeyError(path)

    def lane_file(self, lane_id: int) -> SpecFile | None:
        for f in self.files:
            if f.lane_id == lane_id:
                return f
        return None


@dataclass(frozen=True)
class FencedBlock:
    start: int
    end: int  # closing fence line, or last line when unterminated
    info: str
    content: tuple[tuple[int, str], ...]


def fenced_blocks(spec: SpecFile) -> list[FencedBlock]:
    blocks = []
    open_at = None
    info = ""
    content: list[tuple[int, str]] = []
    for n, text in spec.body_lines:
        m = FENCE_RE.match(text)
        if open_at is None:
            if m:
                open_at, info, content = n, m.group(1).strip(), []
        elif m and not m.group(1).strip():
            blocks.append(FencedBlock(open_at, n, info, tuple(content)))
            open_at = None
        else:
            content.append((n, text))
    if open_at is not None:
        blocks.append(FencedBlock(open_at, spec.line_count, info, tuple(content)))
    return blocks


def prose_lines(spec: SpecFile) -> list[tuple[int, str]]:
    """Body lines outside fenced blocks (fence delimiters excluded)."""
    fenced: set[int] = set()
    for b in fenced_blocks(spec):
        fenced.update(range(b.start, b.end + 1))
    return [(n, t) for n, t in spec.body_lines if n not in fenced]


def _parse_info(info: str) -> tuple[str | None, dict]:
    kind = None
    attrs = {}
    for tok in info.split():
        if tok.startswith("aegis:"):
            kind = tok[len("aegis:"):]
        elif "=" in tok:
            k, _, v = tok.partition("=")
            attrs[k] = v
    return kind, attrs


def _no_dup_object(pairs):
    keys = [k for k, _ in pairs]
    if len(keys) != len(set(keys)):
        raise ValueError("duplicate key")
    return dict(pairs)


def _load_block_json(spec: SpecFile, block: FencedBlock) -> dict:
    raw = "\n".join(t for _, t in block.content)
    try:
        obj = json.loads(raw, object_pairs_hook=_no_dup_object)
    except ValueError as exc:
        raise MalformedSchemaBlock(f"{spec.path}:{block.start}: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedSchemaBlock(f"{spec.path}:{block.start}: expected a JSON object")
    return obj


def _lane_key(spec: SpecFile, block: FencedBlock, key: str) -> int:
    if not re.fullmatch(r"\d+", key) or int(key) <= 0:
        raise MalformedSchemaBlock(f"{spec.path}:{block.start}: bad lane key {key!r}")
    return int(key)


def _extract_blocks(spec: SpecFile) -> list[Block]:
    out = []
    for fb in fenced_blocks(spec):
        kind, attrs = _parse_info(fb.info)
        if kind is None:
            continue
        where = f"{spec.path}:{fb.start}"
        if kind == "schema":
            direction, name = attrs.get("role"), attrs.get("name", "")
            if direction not in ("producer", "consumer") or not name:
                raise MalformedSchemaBlock(f"{where}: schema block needs role= and name=")
            payload = tuple(_load_block_json(spec, fb).keys())
        elif kind == "labels":
            if attrs.get("action") not in ACTIONS:
                raise MalformedSchemaBlock(f"{where}: labels block needs action=")
            payload = tuple(
                (n, t.strip().lstrip("-").strip()) for n, t in fb.content if t.strip()
            )
        elif kind == "authority":
            grants = {}
            for key, actions in _load_block_json(spec, fb).items():
                if not isinstance(actions, list) or any(a not in ACTIONS for a in actions):
                    raise MalformedSchemaBlock(f"{where}: bad actions for lane {key}")
                grants[_lane_key(spec, fb, key)] = frozenset(actions)
            payload = grants
        elif kind == "schedule":
            entries = {}
            for key, cadence in _load_block_json(spec, fb).items():
                if not isinstance(cadence, str):
                    raise MalformedSchemaBlock(f"{where}: cadence for lane {key} is not a string")
                entries[_lane_key(spec, fb, key)] = cadence
            payload = entries
        else:
            continue
        out.append(Block(spec.path, fb.start, kind, attrs, payload))
    return out


def _extract_versions(spec: SpecFile) -> list[VersionDecl]:
    out = []
    v = spec.front_matter.get("version")
    if isinstance(v, str) and VERSION_RE.match(v):
        out.append(VersionDecl(spec.path, spec.front_matter_lines["version"], "front_matter", v))
    in_changelog = False
    for n, text in prose_lines(spec):
        if HEADING_RE.match(text):
            in_changelog = "Changelog" in text
            continue
        if in_changelog:
            m = CHANGELOG_ENTRY_RE.match(text)
            if m:
                out.append(VersionDecl(spec.path, n, "changelog_entry", m.group(1)))
                continue
        m = FOOTER_RE.search(text)
        if m:
            out.append(VersionDecl(spec.path, n, "footer", m.group(1) or m.group(2)))
    return out


def _extract_refs(spec: SpecFile) -> list[RefToken]:
    out = []
    for n, text in prose_lines(spec):
        for m in TICKET_RE.finditer(text):
            out.append(RefToken(spec.path, n, "ticket_key", m.group(0)))
    for n, text in spec.body_lines:
        for m in DOC_REF_RE.finditer(text):
            out.append(RefToken(spec.path, n, "doc_ref", m.group(1)))
    return out


def _extract_used_labels(spec: SpecFile) -> list[LabelDecl]:
    out = []
    action = "create"
    for n, text in prose_lines(spec):
        if HEADING_RE.match(text):
            action = "create"
            continue
        for m in ACTION_RE.finditer(text):
            action = m.group(1)
        for m in LABEL_RE.finditer(text):
            out.append(LabelDecl(spec.path, n, "used", action, m.group(1)))
    return out


def _sorted(items: Iterable, key=lambda d: (d.path, d.line)):
    return tuple(sorted(items, key=key))


def build_corpus(files: Iterable[SpecFile]) -> SpecCorpus:
    files = sorted(files, key=lambda f: f.path)
    if not files:
        raise NoContract("empty corpus")
    contracts = [f for f in files if f.role == "shared_contract"]
    if not contracts:
        raise NoContract("corpus has no shared contract")
    if len(contracts) > 1:
        raise DuplicateContract(", ".join(f.path for f in contracts))
    seen: dict[int, str] = {}
    for f in files:
        if f.lane_id is not None:
            if f.lane_id in seen:
                raise DuplicateLaneId(f"lane {f.lane_id}: {seen[f.lane_id]}, {f.path}")
            seen[f.lane_id] = f.path
    contract = contracts[0]

    versions, schemas, refs, labels, blocks = [], [], [], [], []
    claims, coverage = [], []
    cadences: dict[int, CadenceDecl] = {}
    heads: dict[str, str] = {}
    for f in files:
        file_versions = _extract_versions(f)
        versions += file_versions
        entries = [v for v in file_versions if v.site == "changelog_entry"]
        if entries:
            heads[f.path] = entries[0].version
        refs += _extract_refs(f)
        file_blocks = _extract_blocks(f)
        blocks += file_blocks
        for b in file_blocks:
            if b.kind == "schema":
                schemas.append(SchemaDecl(f.path, b.line, b.attrs["name"], b.attrs["role"], b.payload))
            elif b.kind == "labels" and f is contract:
                for n, token in b.payload:
                    labels.append(LabelDecl(f.path, n, "mandated", b.attrs["action"], token))
        if f.role == "lane_prompt":
            labels += _extract_used_labels(f)
            cadence = f.front_matter.get("cadence")
            if isinstance(cadence, str):
                cadences[f.lane_id] = CadenceDecl(
                    f.path, f.front_matter_lines["cadence"], f.lane_id, cadence
                )
            for n, text in prose_lines(f):
                for m in CLAIM_RE.finditer(text):
                    claims.append(ClaimDecl(f.path, n, f.lane_id, m.group(1)))
        for n, text in prose_lines(f):
            for m in COVERS_RE.finditer(text):
                coverage.append(CoverageDecl(f.path, n, int(m.group(1)), int(m.group(2))))

    authority = next(
        (AuthorityTable(b.path, b.line, b.payload) for b in blocks
         if b.kind == "authority" and b.path == contract.path),
        None,
    )
    schedule = next(
        (ScheduleTable(b.path, b.line, b.payload) for b in blocks
         if b.kind == "schedule" and b.path == contract.path),
        None,
    )
    lane_count = None
    raw_count = contract.front_matter.get("lane_count")
    if isinstance(raw_count, str) and raw_count.isdigit() and int(raw_count) > 0:
        lane_count = int(raw_count)

    index = DeclarationIndex(
        versions=_sorted(versions),
        schemas=_sorted(schemas),
        refs=_sorted(refs, key=lambda r: (r.path, r.line, r.kind, r.value)),
        labels=_sorted(labels),
        authority=authority,
        schedule=schedule,
        lane_count_decl=lane_count,
        cadences=dict(sorted(cadences.items())),
        changelog_heads=heads,
        claims=_sorted(claims),
        coverage=_sorted(coverage),
        blocks=_sorted(blocks),
    )
    return SpecCorpus(tuple(files), index)


def corpus_from_texts(texts: dict[str, str]) -> SpecCorpus:
    return build_corpus(parse_spec_file(text, path) for path, text in texts.items())


def load_corpus_dir(root: str | Path) -> SpecCorpus:
    root = Path(root)
    texts = {
        p.relative_to(root).as_posix(): p.read_text(encoding="utf-8")
        for p in sorted(root.rglob("*.md"))
    }
    return corpus_from_texts(texts)


# ---------------------------------------------------------------------------
# reference resolution


@dataclass(frozen=True)
class ResolvedRef:
    token: RefToken
    status: str  # valid | stale | unknown_kind


@dataclass(frozen=True)
class ResolvedRefs:
    refs: tuple[ResolvedRef, ...]

    def stale(self) -> list[RefToken]:
        return [r.token for r in self.refs if r.status == "stale"]


class RefResolver(Protocol):
    """Anything that can tag a corpus's references. A network-backed issue
    tracker lookup would implement this; only the file registry ships."""

    def resolve(self, corpus: SpecCorpus) -> ResolvedRefs: ...


@dataclass(frozen=True)
class ReferenceRegistry:
    # None means "no ticket list available": ticket keys resolve to unknown_kind.
    tickets: frozenset[str] | None = None
    doc_targets: frozenset[str] = frozenset()

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceRegistry":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise RegistryUnreadable(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise RegistryUnreadable(f"{path}: expected a JSON object")
        tickets = data.get("tickets", [])
        targets = data.get("doc_targets", [])
        if not all(isinstance(x, list) and all(isinstance(s, str) for s in x)
                   for x in (tickets, targets)):
            raise RegistryUnreadable(f"{path}: 'tickets' and 'doc_targets' must be string lists")
        return cls(frozenset(tickets), frozenset(targets))

    def to_json(self) -> str:
        return json.dumps(
            {"tickets": sorted(self.tickets or ()), "doc_targets": sorted(self.doc_targets)},
            indent=2,
        ) + "\n"

    def resolve(self, corpus: SpecCorpus) -> ResolvedRefs:
        return resolve_refs(corpus, self)


def resolve_refs(corpus: SpecCorpus, registry: ReferenceRegistry) -> ResolvedRefs:
    paths = set(corpus.paths)
    out = []
    for tok in corpus.index.refs:
        if tok.kind == "doc_ref":
            ok = tok.value in paths or tok.value in registry.doc_targets
            status = "valid" if ok else "stale"
        elif tok.kind == "ticket_key" and registry.tickets is not None:
            status = "valid" if tok.value in registry.tickets else "stale"
        else:
            status = "unknown_kind"
        out.append(ResolvedRef(tok, status))
    return ResolvedRefs(tuple(out))
