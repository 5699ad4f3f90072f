"""AP change between the unmasked baseline and each masked dataset.

"AP change" is the ratio ``100 * AP_masked / AP_baseline``: 100% means the
masked category made no difference, 0% means detection collapsed. Deviations
are two-sided (``|change - 100|``), so gains rank alongside drops.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping

from .coco import Dataset, annotation_counts
from .evaluator import EvalResult, result_from_dict, result_to_dict

log = logging.getLogger(__name__)


def change_pct(baseline_ap: float, masked_ap: float) -> float | None:
    if baseline_ap < 0:
        raise ValueError(f"baseline AP must be non-negative, got {baseline_ap}")
    if baseline_ap == 0:
        return None
    return 100.0 * masked_ap / baseline_ap


@dataclass(frozen=True)
class ContextEntry:
    target_category_id: int
    masked_category_id: int
    change_pct: float

    @property
    def deviation(self) -> float:
        return abs(self.change_pct - 100.0)

    @property
    def is_self(self) -> bool:
        return self.target_category_id == self.masked_category_id


def _sort_by_deviation(entries) -> list[ContextEntry]:
    return sorted(entries, key=lambda e: (-e.deviation, e.masked_category_id))


def context_entries(target: int, baseline: EvalResult, masked: Mapping[int, EvalResult]) -> list[ContextEntry]:
    """One entry per masked dataset in which the target's AP is defined."""
    base = baseline.ap(target)
    if base is None or base <= 0:
        raise ValueError(f"category {target}: baseline AP {base} leaves the change undefined")
    out = []
    for masked_id in sorted(masked):
        ap = masked[masked_id].ap(target)
        if ap is None:
            log.warning("category %d has no AP on masked set %d", target, masked_id)
            continue
        out.append(ContextEntry(target, masked_id, change_pct(base, ap)))
    return out


def top_k_context(
    target: int, baseline: EvalResult, masked: Mapping[int, EvalResult], k: int = 3
) -> list[ContextEntry]:
    return _sort_by_deviation(context_entries(target, baseline, masked))[:k]


def context_dominant(target: int, entries: list[ContextEntry]) -> bool | None:
    """True when some other category's masking hurts more than self-masking.

    ``None`` when the self-masked or every non-self evaluation is missing.
    """
    own = [e.change_pct for e in entries if e.target_category_id == target and e.is_self]
    others = [e.change_pct for e in entries if e.target_category_id == target and not e.is_self]
    if not own or not others:
        return None
    return min(others) < own[0]


def strongest_context(target: int, entries: list[ContextEntry]) -> ContextEntry | None:
    others = [e for e in entries if e.target_category_id == target and not e.is_self]
    if not others:
        return None
    return min(others, key=lambda e: (e.change_pct, e.masked_category_id))


@dataclass
class AnalysisReport:
    baseline: EvalResult
    entries: list[ContextEntry]
    top_k: dict[int, list[ContextEntry]]
    dominant: dict[int, bool | None]
    annotation_counts: dict[int, int]
    category_names: dict[int, str]
    excluded: list[int] = field(default_factory=list)
    k: int = 3

    def entries_for(self, target: int) -> list[ContextEntry]:
        return [e for e in self.entries if e.target_category_id == target]

    def name(self, category_id: int) -> str:
        return self.category_names.get(category_id, str(category_id))


def analyze(
    baseline: EvalResult,
    masked: Mapping[int, EvalResult],
    dataset: Dataset | None = None,
    *,
    k: int = 3,
    names: Mapping[int, str] | None = None,
    counts: Mapping[int, int] | None = None,
) -> AnalysisReport:
    if k < 1:
        raise ValueError("k must be at least 1")
    if dataset is not None:
        names = names or {c.id: c.name for c in dataset.categories}
        counts = counts or annotation_counts(dataset)
    entries: list[ContextEntry] = []
    top: dict[int, list[ContextEntry]] = {}
    dominant: dict[int, bool | None] = {}
    excluded = []
    for cat in baseline.per_category:
        target = cat.category_id
        if cat.ap is None or cat.ap <= 0:
            log.warning("category %d excluded: baseline AP is %s", target, cat.ap)
            excluded.append(target)
            continue
        found = context_entries(target, baseline, masked)
        entries.extend(found)
        top[target] = _sort_by_deviation(found)[:k]
        dominant[target] = context_dominant(target, found)
    return AnalysisReport(
        baseline=baseline,
        entries=entries,
        top_k=top,
        dominant=dominant,
        annotation_counts=dict(counts or {}),
        category_names=dict(names or {}),
        excluded=excluded,
        k=k,
    )


def rank_context_dependent(report: AnalysisReport, n: int = 15) -> list[int]:
    """Targets ordered by how low their strongest non-self context drives AP."""
    keyed = []
    for target in report.top_k:
        best = strongest_context(target, report.entries_for(target))
        if best is not None:
            keyed.append((best.change_pct, target))
    return [t for _, t in sorted(keyed)[:n]]


@dataclass(frozen=True)
class AccuracyRow:
    category_id: int
    baseline_ap: float
    top: list[ContextEntry]


def top_accuracy_table(report: AnalysisReport, n: int = 10) -> list[AccuracyRow]:
    aps = report.baseline.aps()
    ranked = sorted(report.top_k, key=lambda cid: (-aps[cid], cid))[:n]
    return [AccuracyRow(cid, aps[cid], report.top_k[cid]) for cid in ranked]


def context_table(report: AnalysisReport, n: int = 15) -> list[AccuracyRow]:
    aps = report.baseline.aps()
    return [AccuracyRow(cid, aps[cid], report.top_k[cid]) for cid in rank_context_dependent(report, n)]


def scatter_data(report: AnalysisReport, dataset: Dataset | None = None) -> list[tuple[int, int, float]]:
    """(category id, annotation count, baseline AP) for each category with an AP."""
    counts = annotation_counts(dataset) if dataset is not None else report.annotation_counts
    return [
        (c.category_id, counts.get(c.category_id, 0), c.ap)
        for c in report.baseline.per_category
        if c.ap is not None
    ]


# -- files --------------------------------------------------------------------


def report_to_dict(report: AnalysisReport) -> dict:
    def entry(e: ContextEntry) -> dict:
        return {
            "target_category_id": e.target_category_id,
            "masked_category_id": e.masked_category_id,
            "change_pct": e.change_pct,
            "deviation": e.deviation,
            "is_self": e.is_self,
        }

    return {
        "k": report.k,
        "baseline": result_to_dict(report.baseline),
        "category_names": {str(k): v for k, v in sorted(report.category_names.items())},
        "annotation_counts": {str(k): v for k, v in sorted(report.annotation_counts.items())},
        "excluded": report.excluded,
        "entries": [entry(e) for e in report.entries],
        "top_k": {str(t): [entry(e) for e in es] for t, es in report.top_k.items()},
        "context_dominant": {str(t): d for t, d in report.dominant.items()},
    }


def report_from_dict(data: dict) -> AnalysisReport:
    def entry(d: dict) -> ContextEntry:
        return ContextEntry(int(d["target_category_id"]), int(d["masked_category_id"]), float(d["change_pct"]))

    return AnalysisReport(
        baseline=result_from_dict(data["baseline"]),
        entries=[entry(d) for d in data["entries"]],
        top_k={int(t): [entry(d) for d in es] for t, es in data["top_k"].items()},
        dominant={int(t): d for t, d in data["context_dominant"].items()},
        annotation_counts={int(k): int(v) for k, v in data.get("annotation_counts", {}).items()},
        category_names={int(k): v for k, v in data.get("category_names", {}).items()},
        excluded=[int(c) for c in data.get("excluded", [])],
        k=int(data.get("k", 3)),
    )


def write_report_json(report: AnalysisReport) -> str:
    return json.dumps(report_to_dict(report), indent=1)


def load_report(path) -> AnalysisReport:
    with open(path) as fh:
        return report_from_dict(json.load(fh))


def write_report_csv(report: AnalysisReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["target_category_id", "target_name", "masked_category_id", "masked_name",
         "change_pct", "deviation", "is_self"]
    )
    for e in report.entries:
        writer.writerow(
            [e.target_category_id, report.name(e.target_category_id), e.masked_category_id,
             report.name(e.masked_category_id), repr(e.change_pct), repr(e.deviation), int(e.is_self)]
        )
    return buf.getvalue()
