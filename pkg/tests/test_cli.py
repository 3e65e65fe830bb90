from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from specaudit.cli import main


def run(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_replay_default_fixture(capsys, tmp_path):
    code, out, _ = run(capsys, "replay", "--out", str(tmp_path))
    assert code == 0
    assert "density: 7.1" in out
    for name in ("round_counts.csv", "crosstab.csv", "convergence.svg", "session.json",
                 "defect_catalog.csv", "context_loading_chronology.csv", "distribution.csv"):
        assert (tmp_path / name).is_file()


def test_replay_named_fixture_falls_back_to_shipped_copy(capsys, tmp_path):
    code, out, _ = run(capsys, "replay", "fixtures/study_catalog.csv", "--out", str(tmp_path))
    assert code == 0 and "density: 7.1" in out


def test_replay_bad_catalog_is_usage_error(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,catalog\n")
    code, _, err = run(capsys, "replay", str(bad), "--out", str(tmp_path / "o"))
    assert code == 2 and "unexpected header" in err


def test_lint_clean_corpus(capsys, tmp_path):
    assert run(capsys, "synth", "--lanes", "4", "--seed", "2", "--out", str(tmp_path))[0] == 0
    code, out, _ = run(capsys, "lint", str(tmp_path / "corpus"),
                       "--registry", str(tmp_path / "registry.json"))
    assert code == 0 and out.strip().endswith("0 findings")


def test_lint_mini_preset_scores_perfectly(capsys, tmp_path):
    run(capsys, "synth", "--preset", "mini", "--out", str(tmp_path))
    code, out, _ = run(capsys, "lint", str(tmp_path / "corpus"),
                       "--registry", str(tmp_path / "registry.json"),
                       "--ground-truth", str(tmp_path / "ground_truth.csv"),
                       "--out", str(tmp_path / "lint"))
    assert code == 1
    assert "5 findings" in out and "precision 1.000 recall 1.000" in out
    with open(tmp_path / "lint" / "findings.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 5


def test_simulate_mini_two_clean(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--preset", "mini", "--stop", "two_clean",
                       "--out", str(tmp_path))
    assert code == 0
    assert "recall 1.000" in out and "terminated: converged" in out
    session = json.loads((tmp_path / "session.json").read_text())
    assert [r["clean"] for r in session["rounds"]] == [False, True, True]


def test_audit_round_cap_exit_code(capsys, tmp_path):
    run(capsys, "synth", "--preset", "chain3", "--out", str(tmp_path))
    code, out, _ = run(capsys, "audit", str(tmp_path / "corpus"),
                       "--registry", str(tmp_path / "registry.json"), "--round-cap", "1")
    assert code == 1 and "round_cap" in out


def test_audit_converges_on_clean_corpus(capsys, tmp_path):
    run(capsys, "synth", "--lanes", "3", "--out", str(tmp_path))
    code, _, _ = run(capsys, "audit", str(tmp_path / "corpus"), "--registry",
                     str(tmp_path / "registry.json"), "--scope", "study", "--out", str(tmp_path / "s"))
    assert code == 0
    session = json.loads((tmp_path / "s" / "session.json").read_text())
    assert len(session["rounds"]) == 6 and session["config"]["scope"] == "study"


def test_report_rebuilds_analytics(capsys, tmp_path):
    run(capsys, "replay", "--out", str(tmp_path / "session"))
    code, out, _ = run(capsys, "report", str(tmp_path / "session"), "--out", str(tmp_path / "again"))
    assert code == 0 and "density: 7.1" in out
    for name in ("crosstab.csv", "round_counts.csv", "context_loading_chronology.csv"):
        assert (tmp_path / "session" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_kappa(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("category\nx\nx\ny\ny\n")
    b.write_text("category\nx\ny\nx\ny\n")
    code, out, _ = run(capsys, "kappa", str(a), str(b))
    assert code == 0 and out.strip() == "0.0000"
    b.write_text("category\nx\n")
    assert run(capsys, "kappa", str(a), str(b))[0] == 2


@pytest.mark.parametrize("argv", [
    [], ["bogus"], ["lint"], ["replay", "--lines", "x"], ["audit", "d", "--stop", "never"],
])
def test_usage_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_missing_corpus_dir(capsys, tmp_path):
    code, out, err = run(capsys, "lint", str(tmp_path / "nowhere"))
    assert code == 2 and out == "" and "not a directory" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "specaudit", "replay", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "percent_sum         51  99.9" in proc.stdout
