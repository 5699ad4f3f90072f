"""Render analysis reports as Markdown or CSV tables.

Percentages are shown with one decimal. Where some other category's masking
hurts the target more than masking the target itself, the strongest such
context cell is suffixed with ``*``.
"""

from __future__ import annotations

import csv
import io

from .analyzer import (
    AccuracyRow,
    AnalysisReport,
    ContextEntry,
    context_table,
    scatter_data,
    strongest_context,
    top_accuracy_table,
)


def _cell(report: AnalysisReport, row: AccuracyRow, entry: ContextEntry) -> str:
    text = f"{report.name(entry.masked_category_id)} ({entry.change_pct:.1f}%)"
    if report.dominant.get(row.category_id):
        best = strongest_context(row.category_id, report.entries_for(row.category_id))
        if best is not None and best.masked_category_id == entry.masked_category_id:
            text += "*"
    return text


def _row_cells(report: AnalysisReport, row: AccuracyRow) -> list[str]:
    cells = [_cell(report, row, e) for e in row.top]
    return cells + [""] * (report.k - len(cells))


def _markdown_table(report: AnalysisReport, title: str, rows: list[AccuracyRow]) -> list[str]:
    header = ["category", "AP"] + [f"context {i + 1}" for i in range(report.k)]
    lines = [f"## {title}", "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        cells = [report.name(row.category_id), f"{row.baseline_ap:.3f}", *_row_cells(report, row)]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return lines


def render_markdown(report: AnalysisReport, top_rows: int = 10, context_rows: int = 15) -> str:
    lines = _markdown_table(
        report, "Top categories by baseline AP", top_accuracy_table(report, top_rows)
    )
    lines += _markdown_table(
        report, "Most context-dependent categories", context_table(report, context_rows)
    )
    lines += ["## AP versus annotation count", "", "| category | annotations | AP |", "|---|---|---|"]
    for cid, count, ap in scatter_data(report):
        lines.append(f"| {report.name(cid)} | {count} | {ap:.3f} |")
    if report.excluded:
        names = ", ".join(report.name(c) for c in report.excluded)
        lines += ["", f"Excluded (baseline AP undefined or zero): {names}"]
    return "\n".join(lines) + "\n"


def render_csv(report: AnalysisReport, top_rows: int = 10, context_rows: int = 15) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["table", "rank", "category", "ap"] + [f"context_{i + 1}" for i in range(report.k)])
    for table, rows in (
        ("top_accuracy", top_accuracy_table(report, top_rows)),
        ("context_dependent", context_table(report, context_rows)),
    ):
        for rank, row in enumerate(rows, 1):
            writer.writerow(
                [table, rank, report.name(row.category_id), f"{row.baseline_ap:.3f}", *_row_cells(report, row)]
            )
    writer.writerow([])
    writer.writerow(["category", "annotations", "ap"])
    for cid, count, ap in scatter_data(report):
        writer.writerow([report.name(cid), count, repr(ap)])
    return buf.getvalue()
