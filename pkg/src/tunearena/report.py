"""Aggregate a tournament store into comparison matrices and emit CSV/JSON/SVG.

Per (benchmark, sample size) cell and strategy the report holds

* percent of optimum: ``100 * optimum / median(final runtimes)``,
* median speedup over random search: ``median(rs) / median(strategy)``,
* CLES over random search: ``A(rs, strategy)``, the probability that a
  random-search result is slower than the strategy's result,
* one-sided Mann-Whitney p-values for every ordered strategy pair.
"""

from __future__ import annotations

import csv
import html
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .objective import brute_force_optimum
from .stats import cles, confidence_interval, mann_whitney_u, median, median_speedup, percent_of_optimum
from .tournament import TournamentPlan, load_outcomes, load_plan, store_complete

RS = "random-search"
METRICS = ("percent_of_optimum", "median_speedup_vs_rs", "cles_vs_rs")
SCHEMA_PATH = Path(__file__).with_name("report.schema.json")

DEFINITIONS = {
    "percent_of_optimum": "100 * study optimum / median of per-experiment final mean runtimes",
    "median_speedup_vs_rs": "median(random-search final runtimes) / median(strategy final runtimes)",
    "cles_vs_rs": "P(random-search result > strategy result) + 0.5 P(equal), over all experiment pairs",
    "pvalues": "pvalues[a][b]: one-sided Mann-Whitney U p-value that a's final runtimes are lower than b's",
    "significant": "pairs [a, b] with pvalues[a][b] < alpha and median(a) more than 1% below median(b)",
    "study_optimum": "noiseless brute-force optimum for noise-free synthetic benchmarks, "
                     "otherwise the lowest final mean runtime seen anywhere in the study",
}


class IncompleteStoreError(RuntimeError):
    def __init__(self, missing):
        self.missing = missing
        desc = ", ".join(f"{b}/{s}/S={n} ({have}/{need})" for b, s, n, have, need in missing)
        super().__init__(f"incomplete cells: {desc}")


@dataclass
class CellStats:
    benchmark: str
    sample_size: int
    optimum: float
    finals: Dict[str, List[float]]
    medians: Dict[str, float]
    percent_of_optimum: Dict[str, float]
    median_speedup_vs_rs: Dict[str, Optional[float]]
    cles_vs_rs: Dict[str, Optional[float]]
    pvalues: Dict[str, Dict[str, Optional[float]]]
    significant: List[List[str]] = field(default_factory=list)


@dataclass
class ComparisonReport:
    benchmarks: List[str]
    strategies: List[str]
    sample_sizes: List[int]
    optima: Dict[str, dict]
    cells: List[CellStats]
    aggregate: Dict[str, Dict[str, dict]]
    alpha: float
    flagged: bool = False

    def cell(self, benchmark, size) -> CellStats:
        for c in self.cells:
            if c.benchmark == benchmark and c.sample_size == size:
                return c
        raise KeyError((benchmark, size))

    def matrix(self, benchmark: str, metric: str) -> List[List[Optional[float]]]:
        """Rows follow ``strategies``, columns follow ``sample_sizes``."""
        return [[getattr(self.cell(benchmark, n), metric)[s] for n in self.sample_sizes] for s in self.strategies]

    def to_dict(self) -> dict:
        return {
            "metadata": {"alpha": self.alpha, "min_relative_median_difference": 0.01,
                         "definitions": DEFINITIONS, "significance_flagged": self.flagged},
            "benchmarks": self.benchmarks,
            "strategies": self.strategies,
            "sample_sizes": self.sample_sizes,
            "optima": self.optima,
            "cells": [
                {
                    "benchmark": c.benchmark,
                    "sample_size": c.sample_size,
                    "optimum": c.optimum,
                    "medians": c.medians,
                    "percent_of_optimum": c.percent_of_optimum,
                    "median_speedup_vs_rs": c.median_speedup_vs_rs,
                    "cles_vs_rs": c.cles_vs_rs,
                    "pvalues": c.pvalues,
                    "significant": c.significant,
                }
                for c in self.cells
            ],
            "aggregate_percent_of_optimum": self.aggregate,
        }


def study_optima(plan: TournamentPlan, outcomes: List[dict], policy: str = "auto") -> Dict[str, dict]:
    optima = {}
    for bench in plan.benchmarks:
        if policy == "auto" and bench.synthetic and bench.noise_sigma == 0:
            config, value = brute_force_optimum(bench, plan.space)
            optima[bench.name] = {"value": value, "source": "brute-force", "config": list(config)}
            continue
        if policy not in ("auto", "study"):
            raise ValueError(f"unknown optimum policy {policy!r}")
        finals = [o for o in outcomes if o["benchmark"] == bench.name]
        best = min(finals, key=lambda o: o["final_mean_ms"])
        optima[bench.name] = {"value": best["final_mean_ms"], "source": "study", "config": best["best_config"]}
    return optima


def _cell_stats(bench, size, strategies, finals, optimum, rs=None) -> CellStats:
    medians = {s: median(finals[s]) for s in strategies}
    pct = {s: percent_of_optimum(finals[s], optimum) for s in strategies}
    speed = {s: median_speedup(finals[s], finals[rs]) if rs else None for s in strategies}
    effect = {s: cles(finals[rs], finals[s]) if rs else None for s in strategies}
    pvalues = {a: {b: (mann_whitney_u(finals[a], finals[b], "less").p_value if a != b else None)
                   for b in strategies} for a in strategies}
    return CellStats(bench, size, optimum, finals, medians, pct, speed, effect, pvalues)


def _aggregate(cells, benchmarks, strategies, sizes) -> Dict[str, Dict[str, dict]]:
    out = {}
    for s in strategies:
        out[s] = {}
        for n in sizes:
            vals = [c.percent_of_optimum[s] for c in cells if c.sample_size == n]
            entry = {"mean": sum(vals) / len(vals), "ci_low": None, "ci_high": None}
            if len(vals) >= 2:
                entry["ci_low"], entry["ci_high"] = confidence_interval(vals)
            out[s][str(n)] = entry
    return out


def build_report_from_outcomes(plan: TournamentPlan, outcomes: List[dict], optimum_policy: str = "auto",
                               alpha: Optional[float] = None) -> ComparisonReport:
    """Build the report from outcome records (``outcomes.jsonl`` rows)."""
    by_cell: Dict[tuple, List[float]] = {}
    for o in outcomes:
        by_cell.setdefault((o["benchmark"], o["strategy"], o["size"]), []).append(o["final_mean_ms"])
    strategies = [s.name for s in plan.strategies]
    rs = next((s.name for s in plan.strategies if s.kind == RS), None)
    optima = study_optima(plan, outcomes, optimum_policy)
    cells = []
    for bench in plan.benchmarks:
        for n in plan.sample_sizes:
            finals = {s: by_cell[(bench.name, s, n)] for s in strategies}
            cells.append(_cell_stats(bench.name, n, strategies, finals, optima[bench.name]["value"], rs))
    names = [b.name for b in plan.benchmarks]
    return ComparisonReport(names, strategies, list(plan.sample_sizes), optima, cells,
                            _aggregate(cells, names, strategies, plan.sample_sizes),
                            plan.alpha if alpha is None else alpha)


def build_report(store, optimum_policy: str = "auto") -> ComparisonReport:
    """Load a complete store and compute every matrix.  Refuses incomplete stores."""
    plan = load_plan(store)
    missing = store_complete(plan, store)
    if missing:
        raise IncompleteStoreError(missing)
    report = build_report_from_outcomes(plan, load_outcomes(store), optimum_policy)
    return significance_flags(report, report.alpha)


def significance_flags(report: ComparisonReport, alpha: float = 0.01,
                       min_rel_diff: float = 0.01) -> ComparisonReport:
    """Mark ordered pairs [a, b] where a beats b significantly and by more than 1% in median."""
    for c in report.cells:
        flags = []
        for a in report.strategies:
            for b in report.strategies:
                if a == b:
                    continue
                ma, mb = c.medians[a], c.medians[b]
                if c.pvalues[a][b] < alpha and (mb - ma) > min_rel_diff * mb:
                    flags.append([a, b])
        c.significant = flags
    report.alpha = alpha
    report.flagged = True
    return report


# -- emitters ------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def matrix_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for name, values in rows:
        w.writerow([name] + [_fmt(v) for v in values])
    return buf.getvalue()


def read_matrix_csv(text: str):
    """Inverse of :func:`matrix_csv`: ``(column labels, {row label: values})``."""
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0][1:]
    return header, {r[0]: [float(x) if x != "" else None for x in r[1:]] for r in rows[1:]}


def emit_csv(report: ComparisonReport, outdir) -> List[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for b in report.benchmarks:
        for metric in METRICS:
            text = matrix_csv(["strategy"] + [str(n) for n in report.sample_sizes],
                              zip(report.strategies, report.matrix(b, metric)))
            path = outdir / f"{_safe(b)}__{metric}.csv"
            path.write_text(text, encoding="utf-8")
            written.append(path)
        for n in report.sample_sizes:
            c = report.cell(b, n)
            rows = [(a, [c.pvalues[a][x] for x in report.strategies]) for a in report.strategies]
            path = outdir / f"{_safe(b)}__pvalues__size{n}.csv"
            path.write_text(matrix_csv(["strategy"] + report.strategies, rows), encoding="utf-8")
            written.append(path)
    return written


def emit_json(report: ComparisonReport, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def _ramp(t: float) -> str:
    # light yellow -> dark blue
    lo, hi = (255, 247, 188), (8, 48, 107)
    r, g, b = (round(x + (y - x) * t) for x, y in zip(lo, hi))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(title: str, row_labels, col_labels, values) -> str:
    """Self-contained SVG heatmap, one ``<rect class="cell">`` per matrix entry."""
    cw, ch, left, top = 80, 28, 130, 50
    width = left + cw * len(col_labels) + 20
    height = top + ch * len(row_labels) + 20
    finite = [v for row in values for v in row if v is not None and math.isfinite(v)]
    vmin, vmax = (min(finite), max(finite)) if finite else (0.0, 1.0)
    span = vmax - vmin or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<text x="{left}" y="20" font-size="14">{html.escape(title)}</text>',
    ]
    for j, col in enumerate(col_labels):
        parts.append(f'<text x="{left + cw * j + cw / 2}" y="{top - 8}" text-anchor="middle">{html.escape(str(col))}</text>')
    for i, row in enumerate(row_labels):
        y = top + ch * i
        parts.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4}" text-anchor="end">{html.escape(str(row))}</text>')
        for j, v in enumerate(values[i]):
            x = left + cw * j
            if v is None:
                fill, label, dark = "#dddddd", "n/a", False
            else:
                t = (v - vmin) / span
                fill, label, dark = _ramp(t), f"{v:.3g}", t > 0.55
            parts.append(f'<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" '
                         f'fill="{fill}" stroke="#ffffff"/>')
            color = "#ffffff" if dark else "#000000"
            parts.append(f'<text x="{x + cw / 2}" y="{y + ch / 2 + 4}" text-anchor="middle" fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg(report: ComparisonReport, outdir) -> List[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for b in report.benchmarks:
        for metric in METRICS:
            svg = heatmap_svg(f"{b}: {metric}", report.strategies, report.sample_sizes, report.matrix(b, metric))
            path = outdir / f"{_safe(b)}__{metric}.svg"
            path.write_text(svg, encoding="utf-8")
            written.append(path)
    return written


def emit(report: ComparisonReport, outdir, formats=("csv", "json", "svg")) -> List[Path]:
    written = []
    for fmt in formats:
        if fmt == "csv":
            written += emit_csv(report, outdir)
        elif fmt == "json":
            written.append(emit_json(report, outdir))
        elif fmt == "svg":
            written += emit_svg(report, outdir)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    return written
