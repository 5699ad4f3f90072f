import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctxmask.coco import parse_dataset  # noqa: E402


def small_dataset_dict() -> dict:
    """2 images, 1 category, 3 annotations: one crowd RLE and two polygons."""
    return {
        "info": {"description": "hand fixture"},
        "licenses": [],
        "images": [
            {"id": 1, "width": 4, "height": 3, "file_name": "a.png"},
            {"id": 2, "width": 2, "height": 2, "file_name": "b.png", "coco_url": "x"},
        ],
        "categories": [{"id": 7, "name": "thing", "supercategory": "stuff"}],
        "annotations": [
            {
                "id": 10, "image_id": 1, "category_id": 7, "bbox": [0, 0, 4, 3], "area": 12,
                "segmentation": [[0, 0, 4, 0, 4, 3, 0, 3]], "iscrowd": 0,
            },
            {
                "id": 11, "image_id": 1, "category_id": 7, "bbox": [1, 1, 2, 1], "area": 2,
                "segmentation": [[1, 1, 3, 1, 3, 2, 1, 2]], "iscrowd": 0,
            },
            {
                "id": 12, "image_id": 2, "category_id": 7, "bbox": [0, 0, 2, 2], "area": 4,
                "segmentation": {"size": [2, 2], "counts": "04"}, "iscrowd": 1,
            },
        ],
    }


@pytest.fixture
def small_dict():
    return small_dataset_dict()


@pytest.fixture
def small_dataset():
    return parse_dataset(json.dumps(small_dataset_dict()))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
