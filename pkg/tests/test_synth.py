from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specaudit import synth
from specaudit.findings import CATEGORIES, Finding
from specaudit.inspectors import Scope, run_inspectors
from specaudit.model import corpus_from_texts


def lint(files, registry):
    corpus = corpus_from_texts(files)
    return run_inspectors(corpus, Scope.full(corpus), registry.resolve(corpus))


def test_base_corpus_shape_and_cleanliness():
    base = synth.generate_base_corpus(7, 1)
    assert len(base.files) == 8
    assert lint(base.files, base.registry) == []
    small = synth.generate_base_corpus(2, 0)
    assert len(small.files) == 3
    assert lint(small.files, small.registry) == []


def test_base_corpus_is_deterministic():
    a, b = synth.generate_base_corpus(5, 9), synth.generate_base_corpus(5, 9)
    assert a.files == b.files and a.registry == b.registry
    assert synth.generate_base_corpus(5, 10).files != a.files


def test_base_corpus_rejects_tiny_lane_count():
    with pytest.raises(synth.SynthError):
        synth.generate_base_corpus(1, 0)


def test_schema_layout_keeps_a_producer_and_consumers():
    for n in range(2, 11):
        layout = synth.schema_layout(n)
        for name, (producer, consumers) in layout.items():
            assert 1 <= producer <= n
            assert consumers and producer not in consumers
            assert all(1 <= c <= n for c in consumers)


def test_mini_preset_ground_truth():
    seeded = synth.synthesize(synth.PRESETS["mini"])
    seeds = seeded.ground_truth.seeds
    assert len(seeded.files) == 4
    assert len(seeds) == 5
    assert len({s.category for s in seeds}) == 4
    assert [s.seed_id for s in seeds] == ["S1", "S2", "S3", "S4", "S5"]


def test_empty_plan_changes_nothing():
    base = synth.generate_base_corpus(3, 0)
    files, gt = synth.seed_defects(base, synth.SeedPlan(3, {}))
    assert files == base.files and gt.seeds == ()


def test_masked_seed_appears_after_fixing_its_masker():
    plan = synth.SeedPlan(3, {"version_drift": 1, "stale_jira_refs": 1},
                          masking_edges=(("S1", "S2"),), seed=3)
    seeded = synth.synthesize(plan)
    child = seeded.ground_truth.get("S2")
    assert synth.seed_state(seeded.files, seeded.ground_truth, "S2") == "masked"
    before = seeded.files[child.path].splitlines()[child.inject_patch.line - 1]
    fixed = synth.apply_fix(seeded.files, seeded.ground_truth, "S1")
    after = fixed[child.path].splitlines()[child.inject_patch.line - 1]
    assert before == child.inject_patch.old and after == child.inject_patch.new
    assert synth.seed_state(fixed, seeded.ground_truth, "S2") == "active"
    with pytest.raises(synth.SeedMasked):
        synth.apply_fix(seeded.files, seeded.ground_truth, "S2")


def test_fixing_lone_seed_restores_clean_corpus():
    seeded = synth.synthesize(synth.SeedPlan(4, {"cross_lane_schema": 1}, seed=5))
    assert {f.category for f in lint(seeded.files, seeded.registry)} == {"cross_lane_schema"}
    fixed = synth.apply_fix(seeded.files, seeded.ground_truth, "S1")
    assert lint(fixed, seeded.registry) == []
    assert fixed == seeded.base.files
    with pytest.raises(synth.AlreadyFixed):
        synth.apply_fix(fixed, seeded.ground_truth, "S1")
    with pytest.raises(synth.UnknownSeed):
        synth.apply_fix(fixed, seeded.ground_truth, "S9")


@pytest.mark.parametrize("plan", [
    synth.SeedPlan(3, {"version_drift": 1}, masking_edges=(("S1", "S1"),)),
    synth.SeedPlan(3, {"version_drift": 2}, masking_edges=(("S1", "S2"), ("S2", "S1"))),
    synth.SeedPlan(3, {"version_drift": 1}, masking_edges=(("S1", "S7"),)),
    synth.SeedPlan(3, {"version_drift": 3}, masking_edges=(("S1", "S3"), ("S2", "S3"))),
    synth.SeedPlan(3, {"vibes": 1}),
    synth.SeedPlan(1, {}),
])
def test_invalid_plans(plan):
    with pytest.raises(synth.SynthError):
        plan.validate()


def test_unsatisfiable_plan():
    with pytest.raises(synth.Unsatisfiable):
        synth.synthesize(synth.SeedPlan(2, {"missing_extension": 50}))


def test_priority_mismatch_is_single_line_rename():
    seeded = synth.priority_mismatch()
    [seed] = seeded.ground_truth.seeds
    diff = [p for p in seeded.files if seeded.files[p] != seeded.base.files[p]]
    assert diff == [seed.path]
    patch = seed.inject_patch
    assert "priority_score" in patch.old and "fix_priority" in patch.new


def _f(path, line, category):
    return Finding("", path, line, "version_consistency", category=category)


def test_evaluate_formula_cases():
    seeds = [synth.SeedLabel(f"S{i}", "version_drift", "a.md", i) for i in range(1, 6)]
    perfect = [_f("a.md", i, "version_drift") for i in range(1, 6)]
    pr = synth.evaluate(perfect, seeds)
    assert (pr.precision, pr.recall) == (1, 1)
    partial = perfect[:4] + [_f("a.md", 99, "version_drift")]
    pr = synth.evaluate(partial, seeds)
    assert (pr.precision, pr.recall) == (Fraction(4, 5), Fraction(4, 5))
    pr = synth.evaluate([], seeds)
    assert (pr.precision, pr.recall) == (1, 0)


def test_ground_truth_csv_roundtrip(tmp_path):
    seeded = synth.synthesize(synth.PRESETS["chain3"])
    seeded.write(tmp_path)
    rows = synth.read_ground_truth_csv(tmp_path / "ground_truth.csv")
    assert (tmp_path / "ground_truth.csv").read_text().splitlines()[0] == (
        "seed_id,category,path,line,description,masked_by")
    assert [(r.seed_id, r.masked_by) for r in rows] == [("S1", None), ("S2", "S1"), ("S3", "S2")]
    assert sorted((tmp_path / "corpus").rglob("*.md")) != []


@settings(max_examples=60, deadline=None)
@given(
    lanes=st.integers(3, 8),
    seed=st.integers(0, 10_000),
    counts=st.fixed_dictionaries({c: st.integers(0, 2) for c in CATEGORIES}),
)
def test_seeded_defects_are_exactly_detected(lanes, seed, counts):
    try:
        seeded = synth.synthesize(synth.SeedPlan(lanes, counts, seed=seed))
    except synth.Unsatisfiable:
        return
    pr = synth.evaluate(lint(seeded.files, seeded.registry), seeded.ground_truth)
    assert (pr.false_positives, pr.false_negatives) == (0, 0)
