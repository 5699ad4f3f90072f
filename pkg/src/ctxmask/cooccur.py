"""Image-level category co-occurrence counts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .coco import Dataset


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    """``counts[i, j]``: images holding both categories; diagonal: images holding one."""

    category_ids: tuple[int, ...]
    counts: np.ndarray

    def index(self, category_id: int) -> int:
        try:
            return self.category_ids.index(category_id)
        except ValueError:
            raise KeyError(f"category {category_id} not in matrix") from None

    def count(self, a: int, b: int) -> int:
        return int(self.counts[self.index(a), self.index(b)])


def cooccurrence_matrix(dataset: Dataset) -> CooccurrenceMatrix:
    ids = tuple(dataset.category_ids)
    pos = {cid: i for i, cid in enumerate(ids)}
    presence = np.zeros((len(dataset.images), len(ids)), dtype=np.int64)
    for row, image_id in enumerate(dataset.image_ids):
        for ann in dataset.anns_for_image(image_id):
            presence[row, pos[ann.category_id]] = 1
    return CooccurrenceMatrix(ids, presence.T @ presence)


def conditional_presence(matrix: CooccurrenceMatrix, a: int, b: int) -> float:
    """P(b present | a present) over images."""
    n_a = matrix.count(a, a)
    if n_a == 0:
        raise ValueError(f"category {a} appears in no image; P(. | {a}) is undefined")
    return matrix.count(a, b) / n_a


def matrix_to_csv(matrix: CooccurrenceMatrix, dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([dataset.category(cid).name for cid in matrix.category_ids])
    writer.writerows(matrix.counts.tolist())
    return buf.getvalue()
