from __future__ import annotations

import pytest

from conftest import contract_text, lane_text, make_corpus
from specaudit import synth
from specaudit.inspectors import (
    Scope,
    inspect_cadence,
    inspect_contradictions,
    inspect_label_conventions,
    inspect_lane_count,
    inspect_permission_boundaries,
    inspect_schema_alignment,
    inspect_version_consistency,
    run_inspectors,
    run_scopes,
)
from specaudit.model import ReferenceRegistry


def full(corpus):
    return Scope.full(corpus)


def schema_block(role: str, name: str, fields: list[str]) -> str:
    body = ", ".join(f'"{k}": 1' for k in fields)
    return f"```json aegis:schema role={role} name={name}\n{{{body}}}\n```\n"


def test_scope_invariants():
    with pytest.raises(ValueError):
        Scope("per_file", frozenset({"a", "b"}), False)
    with pytest.raises(ValueError):
        Scope("per_file", frozenset({"a"}), True)
    with pytest.raises(ValueError):
        Scope("full_scope", frozenset({"a"}), False)
    with pytest.raises(ValueError):
        Scope("sideways", frozenset({"a"}), True)
    partial = Scope("partial", frozenset({"a", "b"}), True, frozenset({"label_conventions"}))
    assert partial.cross("label_conventions") and not partial.cross("schema_alignment")


# -- dimension 1 -------------------------------------------------------------

def test_footer_drift_flagged_at_footer_line():
    lane = lane_text(1, "text\n\nDocument version v2.3.0\n")
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane})
    found = inspect_version_consistency(corpus, full(corpus))
    assert [(x.file, x.line, x.severity) for x in found] == [("l.md", 8, "low")]


def test_consistent_versions_are_clean():
    lane = lane_text(1, "## Changelog\n- v2.4.0: current.\n- v2.3.0: older.\n\nv2.4.0\n")
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane})
    assert inspect_version_consistency(corpus, full(corpus)) == []


def test_missing_front_matter_version_needs_cross_file_view():
    lane = "---\nlane: 1\n---\n# Lane 1\n"
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane})
    found = inspect_version_consistency(corpus, full(corpus))
    assert [(x.line, x.severity) for x in found] == [(1, "medium")]
    assert inspect_version_consistency(corpus, Scope.single("l.md")) == []


def test_seeded_footer_drifts_match_ground_truth():
    seeded = synth.synthesize(synth.SeedPlan(7, {"version_drift": 3}, seed=4))
    corpus = make_corpus(seeded.files)
    found = inspect_version_consistency(corpus, full(corpus))
    assert sorted((x.file, x.line) for x in found) == sorted(
        (s.path, s.line) for s in seeded.ground_truth.seeds)


# -- dimension 2 -------------------------------------------------------------

def _fix_queue_corpus(consumer_fields):
    return make_corpus({
        "C.md": contract_text(2),
        "lane_01/PROMPT.md": lane_text(1, schema_block("producer", "fix_queue", ["id", "priority_score"])),
        "lane_02/PROMPT.md": lane_text(2, schema_block("consumer", "fix_queue", consumer_fields)),
    })


def test_field_name_mismatch():
    corpus = _fix_queue_corpus(["id", "fix_priority"])
    found = inspect_schema_alignment(corpus, full(corpus))
    # Oracle: set differences between the two field sets.
    produced, consumed = {"id", "priority_score"}, {"id", "fix_priority"}
    missing, unconsumed = consumed - produced, produced - consumed
    assert [(x.severity, x.file) for x in found if x.severity == "high"] == [
        ("high", "lane_02/PROMPT.md")] * len(missing)
    assert [x.file for x in found if x.severity == "low"] == ["lane_01/PROMPT.md"] * len(unconsumed)
    assert all(x.category == "cross_lane_schema" for x in found)
    assert "fix_priority" in next(x for x in found if x.severity == "high").description


def test_matching_schemas_are_clean():
    corpus = _fix_queue_corpus(["id", "priority_score"])
    assert inspect_schema_alignment(corpus, full(corpus)) == []


def test_schema_check_is_blind_per_file():
    corpus = _fix_queue_corpus(["id", "fix_priority"])
    for path in corpus.paths:
        assert inspect_schema_alignment(corpus, Scope.single(path)) == []


def test_consumer_without_producer():
    corpus = make_corpus({
        "C.md": contract_text(1),
        "l.md": lane_text(1, schema_block("consumer", "orphans", ["x"])),
    })
    [finding] = inspect_schema_alignment(corpus, full(corpus))
    assert finding.severity == "high" and "no lane produces" in finding.description


# -- dimension 3 -------------------------------------------------------------

AUTHORITY = '```json aegis:authority\n{"1": ["create"], "2": ["comment"]}\n```\n'


def test_claim_outside_authority():
    corpus = make_corpus({
        "C.md": contract_text(2, AUTHORITY),
        "l2.md": lane_text(2, "Lane 2 claims:create on tickets.\n"),
    })
    found = inspect_permission_boundaries(corpus, None, full(corpus))
    assert [(x.file, x.line, x.category) for x in found] == [("l2.md", 6, "stale_jira_refs")]


def test_stale_ticket_flagged_even_per_file():
    corpus = make_corpus({
        "C.md": contract_text(1),
        "l.md": lane_text(1, "Follows AEGIS-9999.\n"),
    })
    resolved = ReferenceRegistry(frozenset({"AEGIS-1"})).resolve(corpus)
    for scope in (full(corpus), Scope.single("l.md")):
        found = inspect_permission_boundaries(corpus, resolved, scope)
        assert [(x.line, x.severity) for x in found] == [(6, "medium")]


def test_twelve_seeded_stale_refs():
    seeded = synth.synthesize(synth.SeedPlan(7, {"stale_jira_refs": 12}, seed=2))
    corpus = make_corpus(seeded.files)
    found = inspect_permission_boundaries(corpus, seeded.registry.resolve(corpus), full(corpus))
    assert len(found) == 12


# -- dimension 4 -------------------------------------------------------------

LABELS = "```aegis:labels action=create\naegis-auto\n```\n"


def test_missing_mandated_label():
    corpus = make_corpus({
        "C.md": contract_text(3, LABELS),
        "l3.md": lane_text(3, "Lane 3 claims:create on tickets.\n"),
    })
    [finding] = inspect_label_conventions(corpus, full(corpus))
    assert (finding.file, finding.line, finding.category) == ("l3.md", 6, "label_contract")
    assert inspect_label_conventions(corpus, Scope.single("l3.md")) == []


def test_exact_label_set_is_clean():
    corpus = make_corpus({
        "C.md": contract_text(3, LABELS),
        "l3.md": lane_text(3, "Lane 3 claims:create on tickets.\nApply on action:create\n- label:aegis-auto\n"),
    })
    assert inspect_label_conventions(corpus, full(corpus)) == []


def test_flag_drift_after_fix_codes_as_label_contract():
    # A lane keeps a flag-style label after the contract renamed it.
    corpus = make_corpus({
        "C.md": contract_text(3, "```aegis:labels action=create\nfallback-enabled\n```\n"),
        "l3.md": lane_text(3, "Lane 3 claims:create on tickets.\nApply on action:create\n"
                              "- label:fallback-disabled\n"),
    })
    found = inspect_label_conventions(corpus, full(corpus))
    assert {x.category for x in found} == {"label_contract"}
    assert sorted(x.severity for x in found) == ["low", "medium"]


# -- dimension 5 -------------------------------------------------------------

def test_lane_count_word_mismatch():
    corpus = make_corpus({"C.md": contract_text(7), "l.md": lane_text(1, "We run six lanes.\n")})
    [finding] = inspect_lane_count(corpus, full(corpus))
    assert finding.category == "missing_extension"


@pytest.mark.parametrize("text", ["We run seven lanes.\n", "A 7-lane pipeline.\n", "All 7 lanes.\n"])
def test_lane_count_matching_forms(text):
    corpus = make_corpus({"C.md": contract_text(7), "l.md": lane_text(1, text)})
    assert inspect_lane_count(corpus, full(corpus)) == []


def test_per_file_lane_count_uses_checklist_hint():
    corpus = make_corpus({"C.md": contract_text(7), "l.md": lane_text(1, "We run six lanes.\n")})
    assert inspect_lane_count(corpus, Scope.single("l.md")) == []
    assert len(inspect_lane_count(corpus, Scope.single("l.md", lane_count=7))) == 1


def test_seven_seeded_coverage_gaps():
    seeded = synth.synthesize(synth.SeedPlan(7, {"missing_extension": 7}, seed=0))
    corpus = make_corpus(seeded.files)
    found = inspect_lane_count(corpus, full(corpus))
    assert len(found) == 7


# -- dimension 6 -------------------------------------------------------------

SCHEDULE = '```json aegis:schedule\n{"1": "daily", "4": "daily"}\n```\n'


def test_cadence_mismatch_and_missing_lane():
    corpus = make_corpus({
        "C.md": contract_text(7, SCHEDULE),
        "l4.md": lane_text(4, extra_front="cadence: hourly\n"),
        "l7.md": lane_text(7, extra_front="cadence: daily\n"),
    })
    found = inspect_cadence(corpus, full(corpus))
    assert [(x.file, x.category) for x in found] == [
        ("l4.md", "formula_timing"), ("l7.md", "formula_timing")]
    assert "missing from the contract schedule" in found[1].description


def test_cadence_all_match():
    corpus = make_corpus({
        "C.md": contract_text(7, SCHEDULE),
        "l1.md": lane_text(1, extra_front="cadence: daily\n"),
        "l4.md": lane_text(4, extra_front="cadence: daily\n"),
    })
    assert inspect_cadence(corpus, full(corpus)) == []


# -- dimension 7 -------------------------------------------------------------

def test_schema_redeclared_with_other_fields():
    body = schema_block("producer", "fix_queue", ["id"]) + schema_block("producer", "fix_queue", ["id", "x"])
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane_text(1, body)})
    [finding] = inspect_contradictions(corpus, Scope.single("l.md"))
    assert finding.category == "semantic_text"


def test_identical_redeclaration_is_clean():
    body = schema_block("producer", "fix_queue", ["id"]) * 2
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane_text(1, body)})
    assert inspect_contradictions(corpus, full(corpus)) == []


def test_two_footers_disagree():
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane_text(1, "v2.4.0\nv2.3.9\n")})
    [finding] = inspect_contradictions(corpus, full(corpus))
    assert finding.line == 7


# -- composition -------------------------------------------------------------

def test_base_corpus_clean_under_every_scope_mode():
    base = synth.generate_base_corpus(7, 1)
    corpus = base.corpus()
    resolved = base.registry.resolve(corpus)
    assert run_inspectors(corpus, full(corpus), resolved) == []
    singles = [Scope.single(p) for p in corpus.paths]
    assert run_scopes(corpus, singles, resolved) == []


def test_run_inspectors_respects_dimension_filter():
    corpus = make_corpus({"C.md": contract_text(7), "l.md": lane_text(1, "six lanes\nv1.0.0\n")})
    both = run_inspectors(corpus, full(corpus))
    only = run_inspectors(corpus, full(corpus), dimensions=["lane_count_propagation"])
    assert {x.dimension for x in both} == {"lane_count_propagation", "version_consistency"}
    assert {x.dimension for x in only} == {"lane_count_propagation"}


def test_run_scopes_collapses_overlap():
    corpus = make_corpus({"C.md": contract_text(1), "l.md": lane_text(1, "v1.0.0\n")})
    scopes = [Scope.single("l.md"), full(corpus)]
    assert len(run_scopes(corpus, scopes)) == 1
