"""Cross-file consistency auditing for multi-agent prompt specifications."""

from __future__ import annotations

from .engine import (
    AuditSession,
    EngineConfig,
    ScopePolicy,
    StopRule,
    replay_catalog,
    run_round,
    run_to_quiescence,
)
from .findings import (
    CATEGORIES,
    DIMENSIONS,
    SEVERITIES,
    DefectCatalog,
    Finding,
    classify,
    cohen_kappa,
    dedup,
    grade_severity,
)
from .inspectors import Scope, run_inspectors
from .model import ReferenceRegistry, SpecCorpus, corpus_from_texts, load_corpus_dir

__version__ = "0.1.0"

__all__ = [
    "AuditSession", "CATEGORIES", "DIMENSIONS", "DefectCatalog", "EngineConfig", "Finding",
    "ReferenceRegistry", "SEVERITIES", "Scope", "ScopePolicy", "SpecCorpus", "StopRule",
    "classify", "cohen_kappa", "corpus_from_texts", "dedup", "grade_severity",
    "load_corpus_dir", "replay_catalog", "run_inspectors", "run_round", "run_to_quiescence",
]
