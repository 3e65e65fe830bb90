"""Command-line entry point: ``specaudit <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import report, synth
from .engine import (
    DirectoryProvider,
    EngineConfig,
    ScopePolicy,
    SimulationProvider,
    StopRule,
    replay_catalog,
    run_to_quiescence,
)
from .findings import (
    CatalogFormatError,
    DefectCatalog,
    EmptyInput,
    LengthMismatch,
    cohen_kappa,
    sort_findings,
)
from .inspectors import Scope, run_inspectors
from .model import ReferenceRegistry, SpecError, load_corpus_dir

log = logging.getLogger("specaudit")

STUDY_FIXTURE = "study_catalog.csv"
STUDY_LINE_TOTAL = 7152
FINDINGS_CSV = "findings.csv"
SCOPE_CHOICES = tuple(sorted(("study", "locked")))
STOP_CHOICES = ("one_clean", "two_clean", "one_clean_pass", "two_consecutive_clean")


class UsageError(Exception):
    """Bad input detected after argument parsing; exits 2."""


def _load_registry(path: str | None) -> ReferenceRegistry | None:
    if path is None:
        return None
    try:
        return ReferenceRegistry.load(path)
    except SpecError as exc:
        raise UsageError(str(exc)) from exc


def _load_corpus(root: str):
    if not Path(root).is_dir():
        raise UsageError(f"{root}: not a directory")
    try:
        return load_corpus_dir(root)
    except SpecError as exc:
        raise UsageError(f"{root}: {exc}") from exc


def _write_findings_csv(findings, path: Path) -> None:
    catalog = DefectCatalog()
    catalog.append(findings, 1)
    path.write_text(catalog.to_csv(), newline="")


def _print_findings(findings) -> None:
    for f in findings:
        print(f"{f.file}:{f.line}: [{f.severity}] {f.category}: {f.description}")
    print(f"{len(findings)} findings")


def _print_eval(pr: synth.PrecisionRecall) -> None:
    print(f"precision {float(pr.precision):.3f} recall {float(pr.recall):.3f} "
          f"(tp {pr.true_positives}, fp {pr.false_positives}, fn {pr.false_negatives})")


def _write_session(session, out: Path, include_timing: bool | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = session.to_dict(include_timing)
    (out / "session.json").write_text(session.to_json(include_timing))
    return report.write_analytics(session.catalog, out, data["rounds"],
                                  session.catalog.corpus_line_total or None)


def cmd_lint(args) -> int:
    corpus = _load_corpus(args.corpus)
    registry = _load_registry(args.registry)
    resolved = (registry or ReferenceRegistry()).resolve(corpus)
    findings = sort_findings(run_inspectors(corpus, Scope.full(corpus, args.lane_count), resolved))
    findings = [replace(f, id=f"L-{i}") for i, f in enumerate(findings, start=1)]
    _print_findings(findings)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_findings_csv(findings, out / FINDINGS_CSV)
    if args.ground_truth:
        _print_eval(synth.evaluate(findings, synth.read_ground_truth_csv(args.ground_truth)))
    return 0 if not findings else 1


def _config_from_args(args) -> EngineConfig:
    if getattr(args, "config", None):
        try:
            config = EngineConfig.load(args.config)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
    else:
        config = EngineConfig()
    if args.scope:
        config.policy = ScopePolicy.preset(args.scope)
    if args.stop:
        config.stop_rule = StopRule.parse(args.stop)
    if args.round_cap is not None:
        if args.round_cap < 1:
            raise UsageError("--round-cap must be at least 1")
        config.round_cap = args.round_cap
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _summarize_session(session) -> None:
    for r in session.rounds:
        print(f"round {r.round}: {len(r.new_findings)} new ({r.mode})")
    print(f"terminated: {session.terminated}; {len(session.catalog)} findings in catalog, "
          f"{len(session.catalog.unfixed())} open")
    if session.error:
        print(session.error, file=sys.stderr)


def cmd_audit(args) -> int:
    config = _config_from_args(args)
    _load_corpus(args.corpus)  # fail fast on an unreadable corpus
    provider = DirectoryProvider(args.corpus, _load_registry(args.registry), args.between_rounds)
    session = run_to_quiescence(provider, config)
    _summarize_session(session)
    if args.out:
        _write_session(session, Path(args.out))
    return 0 if session.terminated == "converged" else 1


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.preset:
        plan = synth.PRESETS[args.preset]
        if args.seed is not None:
            plan = synth.SeedPlan(plan.lane_count, plan.counts, plan.masking_edges, args.seed)
        seeded = synth.synthesize(plan)
        seeded.write(out)
        cats = {s.category for s in seeded.ground_truth.seeds}
        print(f"{len(seeded.files)} files, {len(seeded.ground_truth.seeds)} seeds "
              f"across {len(cats)} categories -> {out}")
    else:
        try:
            base = synth.generate_base_corpus(args.lanes, args.seed or 0)
        except synth.SynthError as exc:
            raise UsageError(str(exc)) from exc
        synth.write_corpus(out, base.files, base.registry)
        print(f"{len(base.files)} files, 0 seeds -> {out}")
    return 0


def cmd_simulate(args) -> int:
    plan = synth.PRESETS[args.preset]
    if args.seed is not None:
        plan = synth.SeedPlan(plan.lane_count, plan.counts, plan.masking_edges, args.seed)
    seeded = synth.synthesize(plan)
    config = _config_from_args(args)
    config.simulation = True
    config.seed = plan.seed
    provider = SimulationProvider(seeded)
    session = run_to_quiescence(provider, config)
    _summarize_session(session)
    for round_no, seed_id in provider.fixed_log:
        print(f"round {round_no}: fixed {seed_id}")
    pr = synth.evaluate(session.catalog.findings(), seeded.ground_truth)
    _print_eval(pr)
    if args.out:
        out = Path(args.out)
        seeded.write(out)
        _write_session(session, out)
    return 0 if session.terminated == "converged" else 1


def _fixture_path(name: str):
    return resources.files("specaudit").joinpath("fixtures", name)


def _read_catalog(source, lines: int | None) -> DefectCatalog:
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{source}: {exc}") from exc
    try:
        return DefectCatalog.from_csv_text(text, lines)
    except CatalogFormatError as exc:
        raise UsageError(f"{source}: {exc}") from exc


def cmd_replay(args) -> int:
    source = Path(args.catalog) if args.catalog else None
    lines = args.lines
    if source is None or (not source.exists() and source.name == STUDY_FIXTURE):
        source = _fixture_path(STUDY_FIXTURE)
        lines = lines or STUDY_LINE_TOTAL
    if lines is not None and lines <= 0:
        raise UsageError("--lines must be positive")
    session = replay_catalog(_read_catalog(source, lines))
    summary = _write_session(session, Path(args.out), include_timing=False)
    print(report.format_summary(summary))
    print(f"wrote {args.out}")
    return 0 if session.terminated == "converged" else 1


def cmd_report(args) -> int:
    root = Path(args.session)
    session_file = root / "session.json"
    try:
        data = json.loads(session_file.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"{session_file}: {exc}") from exc
    lines = args.lines or data.get("corpus_line_total") or None
    catalog = _read_catalog(root / "defect_catalog.csv", lines)
    summary = report.write_analytics(catalog, Path(args.out or root), data.get("rounds"), lines)
    print(report.format_summary(summary))
    return 0


def _read_labels(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not rows:
        return []
    header = [h.strip().lower() for h in rows[0]]
    for name in ("category", "label"):
        if name in header:
            col = header.index(name)
            return [r[col].strip() for r in rows[1:] if len(r) > col]
    return [r[0].strip() for r in rows if r]


def cmd_kappa(args) -> int:
    try:
        value = cohen_kappa(_read_labels(args.labels_a), _read_labels(args.labels_b))
    except (LengthMismatch, EmptyInput) as exc:
        raise UsageError(f"kappa: {exc}") from exc
    print(f"{value:.4f}")
    return 0


def _add_engine_flags(p: argparse.ArgumentParser, scope_default=None) -> None:
    p.add_argument("--scope", choices=SCOPE_CHOICES, default=scope_default,
                   help="scope schedule preset")
    p.add_argument("--stop", choices=STOP_CHOICES, help="stop rule")
    p.add_argument("--round-cap", type=int, help="maximum rounds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specaudit",
                                     description="Audit multi-agent prompt specifications.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lint", help="one full-scope pass; exit 0 iff clean")
    p.add_argument("corpus", help="directory of annotated markdown files")
    p.add_argument("--registry", help="reference registry JSON")
    p.add_argument("--lane-count", type=int, help="expected lane count")
    p.add_argument("--ground-truth", help="ground_truth.csv to score findings against")
    p.add_argument("--out", help=f"directory for {FINDINGS_CSV}")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("audit", help="run rounds until the stop rule holds")
    p.add_argument("corpus")
    p.add_argument("--config", help="engine config JSON")
    p.add_argument("--registry")
    p.add_argument("--seed", type=int)
    p.add_argument("--between-rounds", help="shell command run in the corpus dir after each round")
    p.add_argument("--out")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("synth", help="emit a synthetic corpus")
    p.add_argument("--lanes", type=int, default=7)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(synth.PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="seeded corpus, auto-fix session, evaluation")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="mini")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="replay a recorded defect catalog")
    p.add_argument("catalog", nargs="?", help=f"catalog CSV (default: shipped {STUDY_FIXTURE})")
    p.add_argument("--lines", type=int, help="corpus line total for density")
    p.add_argument("--out", default="specaudit-report")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="analytics over a session directory")
    p.add_argument("session")
    p.add_argument("--lines", type=int)
    p.add_argument("--out", help="output directory (default: the session directory)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("kappa", help="Cohen's kappa between two label CSVs")
    p.add_argument("labels_a")
    p.add_argument("labels_b")
    p.set_defaults(func=cmd_kappa)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"specaudit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
