"""Report emission: CSV, JSON, markdown method tables, and metric-vs-p plots.

The markdown table layout matches the paper-style comparison grids: one row
per dataset, one column per method, values rendered as percentages with one
decimal. Rendering is byte-stable for a fixed table.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .results import ResultRow, ResultTable  # noqa: E402

METHOD_LABELS = {
    "text": "Text-Only",
    "speech": "Speech-Only",
    "mm": "Multi-modal",
    "mm_zero": "MM Zero-Filling",
    "tiasu_s": "TI-ASU-S",
    "tiasu_mm": "TI-ASU-MM",
    "mm_dropout": "MM-Dropout",
    "tiasu_dropout": "TI-ASU Dropout",
}

_CSV_FIELDS = ["dataset", "task", "method", "p", "q", "fold", "seed",
               "metric", "value", "kind", "cell_hash", "error"]


def format_pct(value: float) -> str:
    return f"{100.0 * value:.1f}"


def write_csv(table: ResultTable, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for row in sorted(table, key=lambda r: r.key):
            writer.writerow(row.to_dict())
    return path


def write_json(table: ResultTable, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [row.to_dict() for row in sorted(table, key=lambda r: r.key)]
    path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return path


def render_method_table(table: ResultTable, methods: Sequence[str],
                        metric: str, p: float = 0.0, q: float = 0.0,
                        datasets: Optional[Sequence[str]] = None,
                        kind: str = "agg") -> str:
    """Markdown: datasets as rows, methods as columns.

    Methods with no matching rows are omitted entirely; missing single cells
    render as a dash.
    """
    if datasets is None:
        datasets = sorted({r.dataset for r in table.rows(metric=metric, kind=kind)})
    present = []
    for method in methods:
        if table.rows(method=method, metric=metric, p=p, q=q, kind=kind):
            present.append(method)
    lines = ["| Dataset | " + " | ".join(METHOD_LABELS.get(m, m) for m in present) + " |",
             "| --- |" + " --- |" * len(present)]
    for dataset in datasets:
        cells = []
        for method in present:
            rows = table.rows(dataset=dataset, method=method, metric=metric,
                              p=p, q=q, kind=kind)
            cells.append(format_pct(rows[0].value) if rows else "-")
        lines.append(f"| {dataset} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_markdown(table: ResultTable, path: str | Path, metric: str,
                   methods: Optional[Sequence[str]] = None,
                   title: str = "Results") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if methods is None:
        methods = [m for m in METHOD_LABELS if table.rows(method=m, kind="agg")]
    combos = sorted({(r.p, r.q) for r in table.rows(kind="agg", metric=metric)})
    parts = [f"# {title}\n"]
    for p, q in combos:
        parts.append(f"\n## p={p:g}, q={q:g}\n")
        parts.append(render_method_table(table, methods, metric, p=p, q=q))
    path.write_text("".join(parts), encoding="utf-8")
    return path


def plot_metric_vs_p(table: ResultTable, dataset: str, q: float, metric: str,
                     path: str | Path, kind: str = "agg") -> Optional[Path]:
    """Line plot of the aggregated metric against p, one series per method."""
    rows = [r for r in table.rows(dataset=dataset, q=q, metric=metric, kind=kind)]
    if not rows:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    by_method: dict[str, list[ResultRow]] = {}
    for row in rows:
        by_method.setdefault(row.method, []).append(row)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in sorted(by_method):
        series = sorted(by_method[method], key=lambda r: r.p)
        ax.plot([r.p for r in series], [100.0 * r.value for r in series],
                marker="o", label=METHOD_LABELS.get(method, method))
    ax.set_xlabel("training speech missing ratio p")
    ax.set_ylabel(f"{metric} (%)")
    ax.set_title(f"{dataset} (q={q:g})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_report(table: ResultTable, out_dir: str | Path, metric: str,
                formats: Sequence[str] = ("csv", "json", "md", "png"),
                title: str = "Results") -> list[Path]:
    """Write the selected report formats; returns the files created."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = table.aggregate() if not any(r.kind == "agg" for r in table) else table
    written: list[Path] = []
    if "csv" in formats:
        written.append(write_csv(agg, out_dir / "results.csv"))
    if "json" in formats:
        written.append(write_json(agg, out_dir / "results.json"))
    if "md" in formats:
        written.append(write_markdown(agg, out_dir / "report.md", metric,
                                      title=title))
    if "png" in formats:
        datasets = sorted({r.dataset for r in agg.rows(kind="agg")})
        qs = sorted({r.q for r in agg.rows(kind="agg")})
        for dataset in datasets:
            for q in qs:
                target = out_dir / f"{dataset}_q{q:g}_{metric}.png"
                made = plot_metric_vs_p(agg, dataset, q, metric, target)
                if made is not None:
                    written.append(made)
    return written
