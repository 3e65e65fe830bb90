"""Analytics over a defect catalog, CSV emitters and the convergence chart."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from xml.sax.saxutils import escape

from .findings import CATEGORIES, SEVERITIES, DefectCatalog

ONE_DECIMAL = Decimal("0.1")


class ZeroLines(ValueError):
    pass


def round_half_up(value: Decimal) -> Decimal:
    return value.quantize(ONE_DECIMAL, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class SeriesPoint:
    round: int
    new: int
    cumulative: int


def convergence_series(catalog: DefectCatalog, rounds: int | None = None) -> list[SeriesPoint]:
    last = max(catalog.final_round, rounds or 0, 1)
    per_round = [0] * (last + 1)
    for rec in catalog.records:
        per_round[rec.round] += 1
    out, total = [], 0
    for r in range(1, last + 1):
        total += per_round[r]
        out.append(SeriesPoint(r, per_round[r], total))
    return out


@dataclass(frozen=True)
class CrossTab:
    rows: tuple[str, ...]
    cols: tuple[int, ...]
    cells: tuple[tuple[int, ...], ...]  # cells[row][col]

    @property
    def row_totals(self) -> tuple[int, ...]:
        return tuple(sum(r) for r in self.cells)

    @property
    def col_totals(self) -> tuple[int, ...]:
        return tuple(sum(r[j] for r in self.cells) for j in range(len(self.cols)))

    @property
    def grand_total(self) -> int:
        return sum(self.row_totals)

    def cell(self, category: str, round_no: int) -> int:
        return self.cells[self.rows.index(category)][self.cols.index(round_no)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["category", *(f"R{c}" for c in self.cols), "total"])
        for name, row, total in zip(self.rows, self.cells, self.row_totals):
            w.writerow([name, *row, total])
        w.writerow(["column_total", *self.col_totals, self.grand_total])
        return buf.getvalue()


def crosstab(catalog: DefectCatalog, rounds: int | None = None) -> CrossTab:
    last = max(catalog.final_round, rounds or 0, 1)
    grid = [[0] * last for _ in CATEGORIES]
    for rec in catalog.records:
        grid[CATEGORIES.index(rec.finding.category)][rec.round - 1] += 1
    return CrossTab(CATEGORIES, tuple(range(1, last + 1)), tuple(tuple(r) for r in grid))


@dataclass(frozen=True)
class Distribution:
    labels: tuple[str, ...]
    counts: tuple[int, ...]
    percents: tuple[Decimal, ...]
    percent_sum: Decimal

    @property
    def total(self) -> int:
        return sum(self.counts)

    def percent(self, label: str) -> Decimal:
        return self.percents[self.labels.index(label)]

    def count(self, label: str) -> int:
        return self.counts[self.labels.index(label)]


def _distribution(labels, values) -> Distribution:
    counts = tuple(sum(1 for v in values if v == lab) for lab in labels)
    total = sum(counts)
    if total == 0:
        percents = tuple(Decimal("0.0") for _ in labels)
    else:
        percents = tuple(round_half_up(Decimal(100 * c) / Decimal(total)) for c in counts)
    return Distribution(tuple(labels), counts, percents, sum(percents, Decimal("0.0")))


def distribution(catalog: DefectCatalog) -> tuple[Distribution, Distribution]:
    """(taxonomy distribution, severity distribution)."""
    findings = catalog.findings()
    return (
        _distribution(CATEGORIES, [f.category for f in findings]),
        _distribution(SEVERITIES, [f.severity for f in findings]),
    )


def defect_density(catalog: DefectCatalog, corpus_line_total: int | None = None) -> Decimal:
    lines = corpus_line_total if corpus_line_total is not None else catalog.corpus_line_total
    if not lines:
        raise ZeroLines("corpus line total must be positive")
    return round_half_up(Decimal(1000 * len(catalog)) / Decimal(lines))


def distribution_csv(taxonomy: Distribution, severity: Distribution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["kind", "label", "count", "percent"])
    for kind, dist in (("category", taxonomy), ("severity", severity)):
        for lab, c, p in zip(dist.labels, dist.counts, dist.percents):
            w.writerow([kind, lab, c, p])
        w.writerow([kind, "percent_sum", dist.total, dist.percent_sum])
    return buf.getvalue()


def round_counts_csv(series: list[SeriesPoint], rounds=None) -> str:
    """``rounds``: optional round dicts (as in session.json) for clean flag and mode."""
    by_round = {r["round"]: r for r in rounds or []}
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["round", "new_findings", "cumulative", "clean", "scope_mode"])
    for p in series:
        rep = by_round.get(p.round)
        w.writerow([
            p.round, p.new, p.cumulative,
            "" if rep is None else str(rep["clean"]).lower(),
            "" if rep is None else rep["scope_mode"],
        ])
    return buf.getvalue()


def chronology_csv(rounds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["round", "files_loaded", "cross_lane", "notes"])
    for r in rounds:
        w.writerow([r["round"], r["files_loaded"], r["cross_lane"], r.get("notes", "")])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.1f}"


def render_convergence_chart(series: list[SeriesPoint], modes=None) -> str:
    """Standalone SVG: bars are per-round counts, the line is the running total."""
    width, height = 640, 360
    left, right, top, bottom = 56, 56, 24, 48
    plot_w, plot_h = width - left - right, height - top - bottom
    x0, y0 = left, top + plot_h
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="#000000"/>',
        f'<line x1="{x0}" y1="{top}" x2="{x0}" y2="{y0}" stroke="#000000"/>',
        f'<line x1="{x0 + plot_w}" y1="{top}" x2="{x0 + plot_w}" y2="{y0}" stroke="#000000"/>',
        f'<text x="{x0 - 40}" y="{top - 8}" font-size="11">new</text>',
        f'<text x="{x0 + plot_w + 4}" y="{top - 8}" font-size="11">cumulative</text>',
        f'<text x="{x0 + plot_w / 2:.1f}" y="{height - 8}" font-size="11" '
        'text-anchor="middle">round</text>',
    ]
    if series:
        n = len(series)
        max_new = max(max(p.new for p in series), 1)
        max_cum = max(series[-1].cumulative, 1)
        slot = plot_w / n
        bar_w = slot * 0.6
        points = []
        for i, p in enumerate(series):
            cx = x0 + slot * (i + 0.5)
            bh = plot_h * p.new / max_new
            parts.append(
                f'<rect class="bar" x="{_fmt(cx - bar_w / 2)}" y="{_fmt(y0 - bh)}" '
                f'width="{_fmt(bar_w)}" height="{_fmt(bh)}" fill="#4c72b0"/>'
            )
            parts.append(
                f'<text x="{_fmt(cx)}" y="{_fmt(y0 + 14)}" font-size="10" '
                f'text-anchor="middle">{p.round}</text>'
            )
            if modes and i < len(modes):
                parts.append(
                    f'<text x="{_fmt(cx)}" y="{_fmt(y0 + 26)}" font-size="8" '
                    f'text-anchor="middle">{escape(str(modes[i]))}</text>'
                )
            points.append(f"{_fmt(cx)},{_fmt(y0 - plot_h * p.cumulative / max_cum)}")
        parts.append(
            f'<polyline points="{" ".join(points)}" fill="none" stroke="#dd8452" stroke-width="2"/>'
        )
        last_x, last_y = points[-1].split(",")
        parts.append(
            f'<text class="cumulative-label" x="{last_x}" y="{_fmt(float(last_y) - 6)}" '
            f'font-size="11" text-anchor="middle">{series[-1].cumulative}</text>'
        )
        parts.append(f'<text x="{x0 - 6}" y="{top + 4}" font-size="10" text-anchor="end">{max_new}</text>')
        parts.append(
            f'<text x="{x0 + plot_w + 6}" y="{top + 4}" font-size="10">{max_cum}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_analytics(catalog: DefectCatalog, out_dir: str | Path, rounds=None,
                    corpus_line_total: int | None = None) -> dict:
    """Write catalog analytics; returns a summary for printing.

    ``rounds`` are round dicts as produced by ``RoundReport.to_dict``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = convergence_series(catalog, len(rounds) if rounds else None)
    taxonomy, severity = distribution(catalog)
    table = crosstab(catalog, len(rounds) if rounds else None)
    (out / "round_counts.csv").write_text(round_counts_csv(series, rounds), newline="")
    (out / "crosstab.csv").write_text(table.to_csv(), newline="")
    (out / "distribution.csv").write_text(distribution_csv(taxonomy, severity), newline="")
    (out / "defect_catalog.csv").write_text(catalog.to_csv(), newline="")
    modes = [r["scope_mode"] for r in rounds] if rounds else None
    (out / "convergence.svg").write_text(render_convergence_chart(series, modes))
    if rounds:
        (out / "context_loading_chronology.csv").write_text(chronology_csv(rounds), newline="")
    lines = corpus_line_total if corpus_line_total is not None else catalog.corpus_line_total
    return {
        "series": series,
        "taxonomy": taxonomy,
        "severity": severity,
        "crosstab": table,
        "density": defect_density(catalog, lines) if lines else None,
    }


def format_summary(summary: dict) -> str:
    series = summary["series"]
    lines = [
        "round  new  cumulative",
        *(f"{p.round:>5}  {p.new:>3}  {p.cumulative:>10}" for p in series),
        "",
        "category            n     %",
    ]
    tax = summary["taxonomy"]
    for lab, c, p in zip(tax.labels, tax.counts, tax.percents):
        lines.append(f"{lab:<18} {c:>3} {p:>5}")
    lines.append(f"{'percent_sum':<18} {tax.total:>3} {tax.percent_sum:>5}")
    sev = summary["severity"]
    lines.append("severity: " + ", ".join(
        f"{lab} {c} ({p}%)" for lab, c, p in zip(sev.labels, sev.counts, sev.percents)
    ))
    if summary["density"] is not None:
        lines.append(f"density: {summary['density']} defects per thousand lines")
    return "\n".join(lines)
