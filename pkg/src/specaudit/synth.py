"""Synthetic specification corpora with seeded, ground-truth-labelled defects.

Every mutation replaces exactly one line, so line numbers never shift and
ground-truth locations stay valid across fixes. A masked seed is withheld
from the emitted files; fixing its masker writes the masked trigger in.
"""

from __future__ import annotations

import csv
import io
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .findings import CATEGORIES, Finding
from .model import ReferenceRegistry, SpecCorpus, corpus_from_texts

CONTRACT_PATH = "TICKET_CONTRACT.md"
PROJECT = "AEGIS"

SCHEMA_FIELDS = {
    "fix_queue": ("ticket_key", "priority_score", "lane", "summary"),
    "untracked_findings": ("finding_id", "file", "line", "summary"),
    "connectivity": ("service", "status", "checked_at"),
    "fallback": ("queue_path", "reason", "raised_at"),
}
SCHEMA_PRODUCER = {"fix_queue": 3, "untracked_findings": 2, "connectivity": 1, "fallback": 4}
MANDATED_LABELS = {
    "create": ("aegis-auto", "lane-origin"),
    "comment": ("aegis-note",),
    "transition": ("aegis-flow",),
}
CADENCES = ("hourly", "daily", "every-15m", "every-4h", "weekly", "every-30m", "nightly")
FIELD_RENAMES = {"priority_score": "fix_priority"}
SAMPLE_VALUES = {"priority_score": 0.8, "lane": 3, "line": 42}
NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five",
                "six", "seven", "eight", "nine", "ten")

LABEL_PLACEHOLDER = "- (label omitted)"


class SynthError(ValueError):
    pass


class Unsatisfiable(SynthError):
    pass


class UnknownSeed(SynthError):
    pass


class AlreadyFixed(SynthError):
    pass


class SeedMasked(SynthError):
    """The seed's trigger has not been unmasked yet."""


def lane_path(lane: int) -> str:
    return f"lane_{lane:02d}/PROMPT.md"


def _count_word(n: int) -> str:
    return NUMBER_WORDS[n] if n < len(NUMBER_WORDS) else str(n)


def schema_layout(lane_count: int) -> dict[str, tuple[int, tuple[int, ...]]]:
    """schema -> (producer lane, consumer lanes)."""
    out = {}
    for name, lane in SCHEMA_PRODUCER.items():
        producer = (lane - 1) % lane_count + 1
        others = [(producer + k - 1) % lane_count + 1 for k in range(1, lane_count)]
        out[name] = (producer, tuple(others[:2]))
    return out


def authority_grants(lane_count: int) -> dict[int, tuple[str, ...]]:
    grants = {}
    for lane in range(1, lane_count + 1):
        actions = []
        if lane % 2 == 1:
            actions.append("create")
        actions.append("comment")
        if lane % 3 == 0:
            actions.append("transition")
        grants[lane] = tuple(actions)
    return grants


def _schema_json(name: str) -> str:
    return json.dumps({f: SAMPLE_VALUES.get(f, f"{f}-sample") for f in SCHEMA_FIELDS[name]})


def _prev_version(version: str) -> str:
    major, minor, patch = (int(x) for x in version.split("."))
    return f"{major}.{minor - 1}.{patch}"


@dataclass(frozen=True)
class GeneratedCorpus:
    lane_count: int
    seed: int
    files: dict  # path -> text, contract first then lanes
    registry: ReferenceRegistry

    def corpus(self) -> SpecCorpus:
        return corpus_from_texts(self.files)


def generate_base_corpus(lane_count: int, seed: int = 0) -> GeneratedCorpus:
    """A defect-free corpus: one contract plus ``lane_count`` lane prompts."""
    if lane_count < 2:
        raise SynthError("lane_count must be at least 2")
    rng = random.Random(f"base:{lane_count}:{seed}")
    numbers = rng.sample(range(1000, 9000), 3 * lane_count + 2)
    tickets = [f"{PROJECT}-{n}" for n in numbers]
    extra_backlog = [f"{PROJECT}-{n}" for n in rng.sample(range(100, 1000), 5)]
    cadences = {lane: rng.choice(CADENCES) for lane in range(1, lane_count + 1)}
    versions = {
        path: f"2.{rng.randint(1, 9)}.{rng.randint(0, 9)}"
        for path in [CONTRACT_PATH] + [lane_path(i) for i in range(1, lane_count + 1)]
    }
    layout = schema_layout(lane_count)
    grants = authority_grants(lane_count)
    word = _count_word(lane_count)

    files = {CONTRACT_PATH: _contract_text(lane_count, word, versions[CONTRACT_PATH],
                                           grants, cadences, tickets[-2:])}
    for lane in range(1, lane_count + 1):
        files[lane_path(lane)] = _lane_text(
            lane, lane_count, word, versions[lane_path(lane)], cadences[lane],
            layout, grants[lane], tickets[3 * (lane - 1): 3 * lane],
        )
    registry = ReferenceRegistry(frozenset(tickets + extra_backlog), frozenset())
    return GeneratedCorpus(lane_count, seed, files, registry)


def _contract_text(n, word, version, grants, cadences, tickets) -> str:
    authority = json.dumps({str(k): list(v) for k, v in grants.items()})
    schedule = json.dumps({str(k): v for k, v in cadences.items()})
    out = [
        "---", "contract: true", f"lane_count: {n}", f"version: {version}", "---",
        "# TICKET CONTRACT", "",
        f"Shared ticket contract for all {word} lanes of the pipeline.", "",
        "## Lane index",
    ]
    out += [f"- Lane {i}: [[ref: {lane_path(i)}]]" for i in range(1, n + 1)]
    out += ["", "## Creation authority", "```json aegis:authority", authority, "```", "",
            "## Mandatory labels"]
    for action, labels in MANDATED_LABELS.items():
        out += [f"```aegis:labels action={action}", *labels, "```"]
    out += ["", "## Scheduler", "```json aegis:schedule", schedule, "```", "",
            "## Tracking",
            f"- Contract revisions are tracked in {tickets[0]}.",
            f"- Transition identifiers were confirmed in {tickets[1]}.", "",
            "## Restated tables",
            "```json aegis:schedule", schedule, "```",
            "```json aegis:authority", authority, "```", "",
            "## Changelog",
            f"- v{version}: refreshed authority and scheduler tables.",
            f"- v{_prev_version(version)}: initial contract.", "",
            f"Contract version v{version}", ""]
    return "\n".join(out)


def _lane_text(lane, n, word, version, cadence, layout, actions, tickets) -> str:
    out = [
        "---", f"lane: {lane}", f"version: {version}", f"cadence: {cadence}", "---",
        f"# Lane {lane} PROMPT", "",
        f"This prompt governs one stage of a {word}-lane pipeline.",
        f"Shared rules live in [[ref: {CONTRACT_PATH}]].", "",
        "## Scope", f"covers: lanes=1-{n}", f"The pipeline runs {word} lanes in total.", "",
        "## Data contracts",
    ]
    produced = []
    for name, (producer, consumers) in layout.items():
        if producer == lane:
            produced.append(name)
            readers = " and ".join(f"Lane {c}" for c in consumers)
            out += [f"Emits {name} for {readers}.",
                    f"```json aegis:schema role=producer name={name}", _schema_json(name), "```"]
    for name, (producer, consumers) in layout.items():
        if lane in consumers:
            out += [f"Reads {name} from Lane {producer}.",
                    f"```json aegis:schema role=consumer name={name}", _schema_json(name), "```"]
    out += ["", "## Ticket actions"]
    for action in actions:
        out += [f"Lane {lane} claims:{action} on its own tickets.", f"Apply on action:{action}"]
        out += [f"- label:{label}" for label in MANDATED_LABELS[action]]
    out += ["", "## Work items",
            f"- Intake changes follow {tickets[0]}.",
            f"- Retry policy follows {tickets[1]}.", ""]
    if produced:
        out.append("## Payload reference")
        for name in produced:
            out += [f"```json aegis:schema role=producer name={name}", _schema_json(name), "```"]
        out.append("")
    out += ["## Changelog",
            f"- v{version}: clarified data contracts.",
            f"- v{_prev_version(version)}: moved intake under {tickets[2]}.", "",
            f"Document version v{version}", ""]
    return "\n".join(out)


# ---------------------------------------------------------------------------
# seeding


@dataclass(frozen=True)
class Patch:
    path: str
    line: int
    old: str
    new: str


@dataclass(frozen=True)
class SeedRecord:
    seed_id: str
    category: str
    path: str
    line: int  # where the defect is reported
    description: str
    inject_patch: Patch  # base text -> defective text
    masked_by: str | None = None

    @property
    def fix_patch(self) -> Patch:
        p = self.inject_patch
        return Patch(p.path, p.line, p.new, p.old)


@dataclass(frozen=True)
class GroundTruth:
    seeds: tuple[SeedRecord, ...] = ()

    def get(self, seed_id: str) -> SeedRecord:
        for s in self.seeds:
            if s.seed_id == seed_id:
                return s
        raise UnknownSeed(seed_id)

    def masked_children(self, seed_id: str) -> list[SeedRecord]:
        return [s for s in self.seeds if s.masked_by == seed_id]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["seed_id", "category", "path", "line", "description", "masked_by"])
        for s in self.seeds:
            w.writerow([s.seed_id, s.category, s.path, s.line, s.description, s.masked_by or ""])
        return buf.getvalue()


@dataclass(frozen=True)
class SeedLabel:
    """A ground-truth row as read back from ground_truth.csv."""

    seed_id: str
    category: str
    path: str
    line: int
    description: str = ""
    masked_by: str | None = None


def read_ground_truth_csv(path: str | Path) -> list[SeedLabel]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            SeedLabel(r["seed_id"], r["category"], r["path"], int(r["line"]),
                      r["description"], r["masked_by"] or None)
            for r in csv.DictReader(fh)
        ]


@dataclass(frozen=True)
class SeedPlan:
    lane_count: int
    counts: dict = field(default_factory=dict)  # category -> number of seeds
    masking_edges: tuple = ()  # (masker_seed_id, masked_seed_id)
    seed: int = 0

    def seed_ids(self) -> list[tuple[str, str]]:
        """(seed_id, category) in taxonomy order: S1, S2, ..."""
        out = []
        for cat in CATEGORIES:
            for _ in range(self.counts.get(cat, 0)):
                out.append((f"S{len(out) + 1}", cat))
        return out

    def validate(self) -> None:
        if self.lane_count < 2:
            raise SynthError("lane_count must be at least 2")
        for cat, k in self.counts.items():
            if cat not in CATEGORIES:
                raise SynthError(f"unknown category {cat!r}")
            if k < 0:
                raise SynthError(f"negative count for {cat}")
        ids = {sid for sid, _ in self.seed_ids()}
        parent = {}
        for masker, masked in self.masking_edges:
            if masker not in ids or masked not in ids:
                raise SynthError(f"masking edge ({masker}, {masked}) names an unknown seed")
            if masked in parent:
                raise SynthError(f"{masked} has more than one masker")
            parent[masked] = masker
        for start in parent:
            seen, node = set(), start
            while node in parent:
                if node in seen:
                    raise SynthError("masking edges form a cycle")
                seen.add(node)
                node = parent[node]


@dataclass(frozen=True)
class _Site:
    path: str
    line: int  # reported line
    edit_line: int  # mutated line
    key: tuple = ()  # extra selection data


def _sites(corpus: SpecCorpus) -> dict[str, list[_Site]]:
    idx = corpus.index
    sites: dict[str, list[_Site]] = defaultdict(list)
    for v in idx.versions:
        if v.site == "footer":
            sites["version_drift"].append(_Site(v.path, v.line, v.line, (v.version,)))
    for r in idx.refs:
        if r.kind == "ticket_key":
            sites["stale_jira_refs"].append(_Site(r.path, r.line, r.line, (r.value,)))
    firsts, seen = [], set()
    for d in idx.schemas:
        key = (d.path, d.name, d.direction)
        if key in seen:
            if d.direction == "producer":
                sites["semantic_text"].append(_Site(d.path, d.line, d.line + 1, ("schema", d.name)))
            continue
        seen.add(key)
        firsts.append(d)
    for d in firsts:
        if d.direction == "consumer":
            sites["cross_lane_schema"].append(_Site(d.path, d.line, d.line + 1, (d.name, d.fields)))
    for c in idx.coverage:
        if c.path != corpus.contract.path:
            sites["missing_extension"].append(_Site(c.path, c.line, c.line))
    claim_line = {(c.path, c.action): c.line for c in reversed(idx.claims)}
    mandated = {(lab.action, lab.label) for lab in idx.labels if lab.kind == "mandated"}
    for lab in idx.labels:
        if lab.kind == "used" and (lab.action, lab.label) in mandated \
                and (lab.path, lab.action) in claim_line:
            sites["label_contract"].append(
                _Site(lab.path, claim_line[(lab.path, lab.action)], lab.line, (lab.action, lab.label))
            )
    for lane, decl in idx.cadences.items():
        sites["formula_timing"].append(_Site(decl.path, decl.line, decl.line, (lane, decl.cadence)))
    firsts_block = set()
    for b in idx.blocks:
        if b.kind in ("authority", "schedule") and b.path == corpus.contract.path:
            if (b.kind,) in firsts_block:
                sites["semantic_text"].append(_Site(b.path, b.line, b.line + 1, (b.kind,)))
            firsts_block.add((b.kind,))
    for cat in sites:
        sites[cat].sort(key=lambda s: (s.path, s.edit_line))
    return sites


def _replace_line(files: dict, patch: Patch) -> dict:
    text = files[patch.path]
    lines = text.splitlines(keepends=True)
    raw = lines[patch.line - 1]
    body = raw.rstrip("\r\n")
    if body != patch.old:
        raise SynthError(f"{patch.path}:{patch.line}: expected {patch.old!r}, found {body!r}")
    lines[patch.line - 1] = patch.new + raw[len(body):]
    out = dict(files)
    out[patch.path] = "".join(lines)
    return out


def _line(files: dict, path: str, line: int) -> str:
    return files[path].splitlines()[line - 1]


def _mutate(category, site, files, rng, registry, lane_count, field_budget):
    """Return (new line text, description) for one seed at ``site``."""
    old = _line(files, site.path, site.edit_line)
    if category == "version_drift":
        (version,) = site.key
        major, minor, patch = (int(x) for x in version.split("."))
        drifted = f"{major}.{minor}.{patch + rng.randint(1, 3)}"
        return old.replace(f"v{version}", f"v{drifted}"), f"footer version drifted to v{drifted}"
    if category == "stale_jira_refs":
        (key,) = site.key
        taken = registry.tickets or frozenset()
        while True:
            stale = f"{PROJECT}-{rng.randint(9000, 9999)}"
            if stale not in taken:
                break
        return old.replace(key, stale), f"ticket {key} replaced by unregistered {stale}"
    if category == "cross_lane_schema":
        name, fields = site.key
        candidates = [f for f in fields if field_budget[(name, f)] > 0]
        if not candidates:
            return None
        target = rng.choice(candidates)
        field_budget[(name, target)] -= 1
        renamed = FIELD_RENAMES.get(target, f"{target}_ref")
        obj = json.loads(old)
        obj = {(renamed if k == target else k): v for k, v in obj.items()}
        return json.dumps(obj), f"consumer of {name} renames {target} to {renamed}"
    if category == "missing_extension":
        return f"covers: lanes=1-{lane_count - 1}", f"coverage stops at lane {lane_count - 1}"
    if category == "label_contract":
        action, label = site.key
        return LABEL_PLACEHOLDER, f"mandated label {label} dropped for {action}"
    if category == "formula_timing":
        lane, cadence = site.key
        other = rng.choice([c for c in CADENCES if c != cadence])
        return f"cadence: {other}", f"lane {lane} cadence desynced to {other}"
    if category == "semantic_text":
        obj = json.loads(old)
        if site.key[0] == "schema":
            first = next(iter(obj))
            obj = {(f"{first}_alt" if k == first else k): v for k, v in obj.items()}
            return json.dumps(obj), f"restated {site.key[1]} payload renames {first}"
        lane = rng.choice(sorted(obj))
        if site.key[0] == "schedule":
            obj[lane] = rng.choice([c for c in CADENCES if c != obj[lane]])
            return json.dumps(obj), f"restated schedule changes lane {lane} to {obj[lane]}"
        actions = obj[lane]
        obj[lane] = [a for a in actions if a != "comment"] if "comment" in actions else actions + ["comment"]
        return json.dumps(obj), f"restated authority changes lane {lane} grants"
    raise SynthError(f"unknown category {category!r}")


def seed_defects(base: GeneratedCorpus, plan: SeedPlan) -> tuple[dict, GroundTruth]:
    plan.validate()
    if plan.lane_count != base.lane_count:
        raise SynthError("plan lane_count does not match the base corpus")
    rng = random.Random(f"seed:{plan.seed}")
    sites = _sites(base.corpus())
    masked_by = {masked: masker for masker, masked in plan.masking_edges}

    # A producer field stays consumed while at least one consumer keeps it.
    consumers = defaultdict(int)
    for s in sites.get("cross_lane_schema", []):
        name, fields = s.key
        for f in fields:
            consumers[(name, f)] += 1
    field_budget = defaultdict(int, {k: v - 1 for k, v in consumers.items()})

    used_lines: set[tuple[str, int]] = set()
    records = []
    for seed_id, category in plan.seed_ids():
        pool = [s for s in sites.get(category, []) if (s.path, s.edit_line) not in used_lines]
        rng.shuffle(pool)
        made = None
        for site in pool:
            made = _mutate(category, site, base.files, rng, base.registry,
                           base.lane_count, field_budget)
            if made is not None:
                break
        if made is None:
            raise Unsatisfiable(f"no free site for {seed_id} ({category})")
        new_text, description = made
        used_lines.add((site.path, site.edit_line))
        old_text = _line(base.files, site.path, site.edit_line)
        records.append(SeedRecord(
            seed_id, category, site.path, site.line, description,
            Patch(site.path, site.edit_line, old_text, new_text), masked_by.get(seed_id),
        ))

    files = dict(base.files)
    for rec in records:
        if rec.masked_by is None:
            files = _replace_line(files, rec.inject_patch)
    return files, GroundTruth(tuple(records))


def _is_fixed(files: dict, gt: GroundTruth, seed: SeedRecord) -> bool:
    present = _line(files, seed.path, seed.inject_patch.line) == seed.inject_patch.new
    if present:
        return False
    return seed.masked_by is None or _is_fixed(files, gt, gt.get(seed.masked_by))


def seed_state(files: dict, gt: GroundTruth, seed_id: str) -> str:
    """'active', 'masked' or 'fixed'."""
    seed = gt.get(seed_id)
    if _line(files, seed.path, seed.inject_patch.line) == seed.inject_patch.new:
        return "active"
    return "fixed" if _is_fixed(files, gt, seed) else "masked"


def apply_fix(files: dict, ground_truth: GroundTruth, seed_id: str) -> dict:
    seed = ground_truth.get(seed_id)
    state = seed_state(files, ground_truth, seed_id)
    if state == "fixed":
        raise AlreadyFixed(seed_id)
    if state == "masked":
        raise SeedMasked(seed_id)
    files = _replace_line(files, seed.fix_patch)
    for child in ground_truth.masked_children(seed_id):
        files = _replace_line(files, child.inject_patch)
    return files


@dataclass(frozen=True)
class PrecisionRecall:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self) -> Fraction:
        d = self.true_positives + self.false_positives
        return Fraction(1) if d == 0 else Fraction(self.true_positives, d)

    @property
    def recall(self) -> Fraction:
        d = self.true_positives + self.false_negatives
        return Fraction(1) if d == 0 else Fraction(self.true_positives, d)


def evaluate(findings, ground_truth) -> PrecisionRecall:
    """Match findings to seeds on (path, line, category), one-to-one.

    ``ground_truth`` may be a GroundTruth or any iterable of seed rows with
    ``path``, ``line`` and ``category``.
    """
    seeds = ground_truth.seeds if isinstance(ground_truth, GroundTruth) else tuple(ground_truth)
    open_seeds = defaultdict(int)
    for s in seeds:
        open_seeds[(s.path, s.line, s.category)] += 1
    tp = fp = 0
    for f in findings:
        key = (f.file, f.line, f.category)
        if open_seeds[key] > 0:
            open_seeds[key] -= 1
            tp += 1
        else:
            fp += 1
    return PrecisionRecall(tp, fp, sum(open_seeds.values()))


# ---------------------------------------------------------------------------
# presets


PRESETS = {
    # Four files (contract + three lanes), five seeds over four categories.
    "mini": SeedPlan(
        lane_count=3,
        counts={"version_drift": 1, "stale_jira_refs": 1, "cross_lane_schema": 2,
                "label_contract": 1},
        seed=7,
    ),
    # S1 masks S2, S2 masks S3.
    "chain3": SeedPlan(
        lane_count=3,
        counts={"version_drift": 1, "stale_jira_refs": 1, "label_contract": 1},
        masking_edges=(("S1", "S2"), ("S2", "S3")),
        seed=11,
    ),
}


@dataclass(frozen=True)
class SeededCorpus:
    base: GeneratedCorpus
    files: dict
    ground_truth: GroundTruth

    @property
    def registry(self) -> ReferenceRegistry:
        return self.base.registry

    def write(self, out_dir: str | Path) -> None:
        write_corpus(out_dir, self.files, self.base.registry, self.ground_truth)


def synthesize(plan: SeedPlan, base_seed: int | None = None) -> SeededCorpus:
    base = generate_base_corpus(plan.lane_count, plan.seed if base_seed is None else base_seed)
    files, gt = seed_defects(base, plan)
    return SeededCorpus(base, files, gt)


def priority_mismatch(lane_count: int = 7, seed: int = 0) -> SeededCorpus:
    """Base corpus whose first fix_queue consumer expects ``fix_priority``
    while the producer emits ``priority_score``."""
    base = generate_base_corpus(lane_count, seed)
    decl = next(d for d in base.corpus().index.schemas
                if d.name == "fix_queue" and d.direction == "consumer")
    old = _line(base.files, decl.path, decl.line + 1)
    new = old.replace('"priority_score"', '"fix_priority"')
    rec = SeedRecord("S1", "cross_lane_schema", decl.path, decl.line,
                     "consumer of fix_queue renames priority_score to fix_priority",
                     Patch(decl.path, decl.line + 1, old, new))
    return SeededCorpus(base, _replace_line(base.files, rec.inject_patch), GroundTruth((rec,)))


def write_corpus(out_dir: str | Path, files: dict, registry: ReferenceRegistry,
                 ground_truth: GroundTruth | None = None) -> None:
    out = Path(out_dir)
    for path, text in files.items():
        target = out / "corpus" / path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    (out / "registry.json").write_text(registry.to_json(), encoding="utf-8")
    if ground_truth is not None:
        (out / "ground_truth.csv").write_text(ground_truth.to_csv(), encoding="utf-8", newline="")


def seeds_detected(findings: list[Finding], ground_truth: GroundTruth, files: dict) -> list[str]:
    """Active seeds matched by at least one finding, in ground-truth order."""
    keys = {(f.file, f.line, f.category) for f in findings}
    return [
        s.seed_id for s in ground_truth.seeds
        if (s.path, s.line, s.category) in keys
        and seed_state(files, ground_truth, s.seed_id) == "active"
    ]
