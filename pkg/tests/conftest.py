from __future__ import annotations

import time
from importlib import resources

import pytest

from specaudit.findings import DefectCatalog
from specaudit.model import corpus_from_texts

STUDY_LINE_TOTAL = 7152
SUITE_BUDGET_S = 60.0

# criterion name -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}
_started = [0.0]


def pytest_sessionstart(session):
    _started[0] = time.perf_counter()


def _suite_line(elapsed: float) -> tuple[bool, str]:
    return elapsed < SUITE_BUDGET_S, f"{elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s)"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - _started[0]
    rows = dict(ACCEPTANCE)
    rows["full suite wall time"] = _suite_line(elapsed)
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in rows.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def pytest_sessionfinish(session, exitstatus):
    if ACCEPTANCE and exitstatus == 0:
        ok, _ = _suite_line(time.perf_counter() - _started[0])
        if not ok:
            session.exitstatus = 1


def study_fixture_text() -> str:
    return resources.files("specaudit").joinpath("fixtures", "study_catalog.csv").read_text(
        encoding="utf-8"
    )


@pytest.fixture
def study_catalog() -> DefectCatalog:
    return DefectCatalog.from_csv_text(study_fixture_text(), STUDY_LINE_TOTAL)


CONTRACT_HEAD = """---
contract: true
lane_count: {n}
version: 2.4.0
---
# Contract
"""


def lane_text(lane: int, body: str = "", version: str = "2.4.0", extra_front: str = "") -> str:
    return f"---\nlane: {lane}\nversion: {version}\n{extra_front}---\n# Lane {lane}\n{body}"


def contract_text(n: int = 2, body: str = "") -> str:
    return CONTRACT_HEAD.format(n=n) + body


def make_corpus(files: dict[str, str]):
    return corpus_from_texts(files)
