"""COCO-style bbox Average Precision over IoU thresholds 0.50:0.05:0.95."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .coco import Annotation, BBox, Dataset, Detection


def _default_iou_thresholds() -> tuple[float, ...]:
    return tuple(np.linspace(0.5, 0.95, 10).tolist())


def _default_recall_thresholds() -> tuple[float, ...]:
    return tuple(np.linspace(0.0, 1.0, 101).tolist())


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple[float, ...] = field(default_factory=_default_iou_thresholds)
    recall_thresholds: tuple[float, ...] = field(default_factory=_default_recall_thresholds)
    max_dets: int = 100

    def __post_init__(self) -> None:
        for name in ("iou_thresholds", "recall_thresholds"):
            values = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, values)
            if not values:
                raise ValueError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            if values[0] < 0 or values[-1] > 1:
                raise ValueError(f"{name} must lie within [0, 1]")
        if self.max_dets < 1:
            raise ValueError("max_dets must be at least 1")


@dataclass(frozen=True)
class CategoryEval:
    category_id: int
    ap: float | None
    num_gt: int
    num_dets: int


@dataclass(frozen=True)
class EvalResult:
    params: EvalParams
    per_category: tuple[CategoryEval, ...]

    @property
    def map(self) -> float:
        aps = [c.ap for c in self.per_category if c.ap is not None]
        return float(np.mean(aps)) if aps else 0.0

    def ap(self, category_id: int) -> float | None:
        for c in self.per_category:
            if c.category_id == category_id:
                return c.ap
        raise KeyError(f"category {category_id} not in evaluation")

    def aps(self) -> dict[int, float | None]:
        return {c.category_id: c.ap for c in self.per_category}


# -- geometry -----------------------------------------------------------------


def _intersection(a: BBox, b: BBox) -> float:
    iw = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    ih = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    return max(iw, 0.0) * max(ih, 0.0)


def bbox_iou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def crowd_iou(det: BBox, crowd: BBox) -> float:
    """Fraction of the detection covered by a crowd region."""
    area = det[2] * det[3]
    return _intersection(det, crowd) / area if area > 0 else 0.0


# -- matching -----------------------------------------------------------------

_THRESHOLD_SLACK = 1e-12


@dataclass(frozen=True)
class MatchLabel:
    kind: str  # "tp", "fp" or "ignored"
    gt_id: int | None = None

    @property
    def is_tp(self) -> bool:
        return self.kind == "tp"


FP = MatchLabel("fp")
IGNORED = MatchLabel("ignored")


def rank_detections(dets: Sequence[Detection], max_dets: int | None = None) -> list[Detection]:
    """Score-descending order; stable, so equal scores keep input order."""
    ranked = sorted(dets, key=lambda d: -d.score)
    return ranked if max_dets is None else ranked[:max_dets]


def _match_ranked(
    gts: Sequence[Annotation], ranked: Sequence[Detection], iou_thr: float
) -> list[MatchLabel]:
    regular = [g for g in gts if not g.iscrowd]
    crowds = [g for g in gts if g.iscrowd]
    taken = [False] * len(regular)
    labels = []
    # thresholds are meant as decimals: IoU 3/5 must pass 0.6000000000000001
    iou_thr = iou_thr - _THRESHOLD_SLACK
    for det in ranked:
        best, best_iou = -1, iou_thr
        for j, gt in enumerate(regular):
            if taken[j]:
                continue
            iou = bbox_iou(det.bbox, gt.bbox)
            # first GT reaching the threshold, replaced only by a strictly better one
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
            labels.append(MatchLabel("tp", regular[best].id))
        elif any(crowd_iou(det.bbox, c.bbox) >= iou_thr for c in crowds):
            labels.append(IGNORED)
        else:
            labels.append(FP)
    return labels


def match_detections(
    gts: Sequence[Annotation],
    dets: Sequence[Detection],
    iou_thr: float,
    max_dets: int = 100,
) -> list[tuple[Detection, MatchLabel]]:
    """Greedy matching of one (image, category) cell.

    Returns the ranked, truncated detections paired with their labels.
    """
    ranked = rank_detections(dets, max_dets)
    return list(zip(ranked, _match_ranked(gts, ranked, iou_thr)))


# -- AP -----------------------------------------------------------------------



def average_precision(
    tp_flags: Sequence[bool],
    num_gt: int,
    recall_thresholds: Sequence[float] | None = None,
) -> float | None:
    """Interpolated AP of a score-sorted TP/FP sequence (ignored dets removed).

    Returns ``None`` when there is no ground truth.
    """
    if num_gt <= 0:
        return None
    rec_thrs = np.asarray(
        _default_recall_thresholds() if recall_thresholds is None else recall_thresholds
    )
    flags = np.asarray(tp_flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # envelope: best precision at this or any higher recall
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, rec_thrs - _THRESHOLD_SLACK, side="left")
    sampled = np.where(idx < flags.size, envelope[np.minimum(idx, flags.size - 1)], 0.0)
    return float(np.mean(sampled))


def evaluate(
    dataset: Dataset,
    dets: Iterable[Detection],
    params: EvalParams | None = None,
) -> EvalResult:
    params = params or EvalParams()
    # detections keyed by cell, input order preserved for the tie rule
    cells: dict[tuple[int, int], list[tuple[int, Detection]]] = defaultdict(list)
    for idx, det in enumerate(dets):
        if dataset.has_image(det.image_id):
            cells[(det.image_id, det.category_id)].append((idx, det))

    per_category = []
    for cid in dataset.category_ids:
        gts_by_image: dict[int, list[Annotation]] = defaultdict(list)
        for ann in dataset.anns_for_category(cid):
            gts_by_image[ann.image_id].append(ann)
        num_gt = sum(1 for a in dataset.anns_for_category(cid) if not a.iscrowd)
        image_ids = sorted(set(gts_by_image) | {i for (i, c) in cells if c == cid})

        ranked_cells = {}
        for image_id in image_ids:
            ranked = sorted(cells.get((image_id, cid), []), key=lambda p: (-p[1].score, p[0]))
            ranked_cells[image_id] = ranked[: params.max_dets]
        num_dets = sum(len(r) for r in ranked_cells.values())
        if num_gt == 0:
            per_category.append(CategoryEval(cid, None, 0, num_dets))
            continue

        aps = []
        for thr in params.iou_thresholds:
            # (score, input index) orders the merged sequence across images
            labelled: list[tuple[float, int, bool]] = []
            for image_id, ranked in ranked_cells.items():
                labels = _match_ranked(gts_by_image.get(image_id, []), [d for _, d in ranked], thr)
                for (idx, det), label in zip(ranked, labels):
                    if label.kind != "ignored":
                        labelled.append((-det.score, idx, label.is_tp))
            labelled.sort()
            aps.append(average_precision([tp for _, _, tp in labelled], num_gt, params.recall_thresholds))
        per_category.append(CategoryEval(cid, float(np.mean(aps)), num_gt, num_dets))
    return EvalResult(params, tuple(per_category))


# -- serialization ------------------------------------------------------------


def result_to_dict(result: EvalResult, dataset: Dataset | None = None) -> dict:
    names = {c.id: c.name for c in dataset.categories} if dataset else {}
    return {
        "params": {
            "iou_thresholds": list(result.params.iou_thresholds),
            "recall_thresholds": list(result.params.recall_thresholds),
            "max_dets": result.params.max_dets,
        },
        "per_category": [
            {
                "category_id": c.category_id,
                "category_name": names.get(c.category_id, ""),
                "num_gt": c.num_gt,
                "num_dets": c.num_dets,
                "ap": c.ap,
            }
            for c in result.per_category
        ],
        "map": result.map,
    }


def result_from_dict(data: dict) -> EvalResult:
    p = data.get("params", {})
    params = EvalParams(
        iou_thresholds=tuple(p.get("iou_thresholds", _default_iou_thresholds())),
        recall_thresholds=tuple(p.get("recall_thresholds", _default_recall_thresholds())),
        max_dets=int(p.get("max_dets", 100)),
    )
    cats = tuple(
        CategoryEval(
            int(r["category_id"]),
            None if r["ap"] is None else float(r["ap"]),
            int(r["num_gt"]),
            int(r["num_dets"]),
        )
        for r in data["per_category"]
    )
    return EvalResult(params, cats)


def write_result_json(result: EvalResult, dataset: Dataset | None = None) -> str:
    return json.dumps(result_to_dict(result, dataset), indent=1)


def write_result_csv(result: EvalResult, dataset: Dataset | None = None) -> str:
    names = {c.id: c.name for c in dataset.categories} if dataset else {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category_id", "category_name", "num_gt", "num_dets", "ap"])
    for c in result.per_category:
        ap = "" if c.ap is None else repr(c.ap)
        writer.writerow([c.category_id, names.get(c.category_id, ""), c.num_gt, c.num_dets, ap])
    writer.writerow(["map", "", "", "", repr(result.map)])
    return buf.getvalue()


def read_result_csv(text: str) -> EvalResult:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        if r["category_id"] == "map":
            continue
        rows.append({**r, "ap": r["ap"] or None})
    return result_from_dict({"per_category": rows})
