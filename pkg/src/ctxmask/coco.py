"""COCO annotation and detection-result files: data model, parsing, validation."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Union

from .segm import RunLengthEncoding, SegmentationError

BBox = tuple[float, float, float, float]
PolygonSet = list[list[float]]
Segmentation = Union[PolygonSet, RunLengthEncoding]


class CocoFormatError(ValueError):
    """Raised when an annotation or result file cannot be turned into objects."""


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: str = ""


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: int
    height: int
    file_name: str


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    area: float
    segmentation: Segmentation = field(default_factory=list)
    iscrowd: bool = False


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: BBox
    score: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable COCO dataset with image and category lookup indexes."""

    images: tuple[ImageInfo, ...] = ()
    annotations: tuple[Annotation, ...] = ()
    categories: tuple[Category, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "categories", tuple(self.categories))
        by_image: dict[int, list[Annotation]] = defaultdict(list)
        by_category: dict[int, list[Annotation]] = defaultdict(list)
        for ann in self.annotations:
            by_image[ann.image_id].append(ann)
            by_category[ann.category_id].append(ann)
        object.__setattr__(self, "_anns_by_image", dict(by_image))
        object.__setattr__(self, "_anns_by_category", dict(by_category))
        object.__setattr__(self, "_images", {im.id: im for im in self.images})
        object.__setattr__(self, "_categories", {c.id: c for c in self.categories})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        key = lambda item: item.id  # noqa: E731
        return (
            sorted(self.images, key=key) == sorted(other.images, key=key)
            and sorted(self.annotations, key=key) == sorted(other.annotations, key=key)
            and sorted(self.categories, key=key) == sorted(other.categories, key=key)
        )

    __hash__ = None  # type: ignore[assignment]

    def image(self, image_id: int) -> ImageInfo:
        try:
            return self._images[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id}") from None

    def category(self, category_id: int) -> Category:
        try:
            return self._categories[category_id]
        except KeyError:
            raise KeyError(f"unknown category id {category_id}") from None

    def has_image(self, image_id: int) -> bool:
        return image_id in self._images

    def has_category(self, category_id: int) -> bool:
        return category_id in self._categories

    def anns_for_image(self, image_id: int) -> list[Annotation]:
        return list(self._anns_by_image.get(image_id, ()))

    def anns_for_category(self, category_id: int) -> list[Annotation]:
        return list(self._anns_by_category.get(category_id, ()))

    @property
    def category_ids(self) -> list[int]:
        return sorted(self._categories)

    @property
    def image_ids(self) -> list[int]:
        return sorted(self._images)

    def category_by_name(self, name: str) -> Category:
        for cat in self.categories:
            if cat.name == name:
                return cat
        raise KeyError(f"unknown category name {name!r}")


# -- parsing ------------------------------------------------------------------


def _require(record: dict, keys: Iterable[str], what: str) -> None:
    if not isinstance(record, dict):
        raise CocoFormatError(f"{what} record must be an object, got {type(record).__name__}")
    missing = [k for k in keys if k not in record]
    if missing:
        ident = record.get("id", "?")
        raise CocoFormatError(f"{what} {ident}: missing required field(s) {missing}")


def _bbox(value: Any, what: str) -> BBox:
    try:
        x, y, w, h = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise CocoFormatError(f"{what}: bbox must be four numbers, got {value!r}") from exc
    return (x, y, w, h)


def _segmentation(value: Any, what: str) -> Segmentation:
    if isinstance(value, dict):
        try:
            return RunLengthEncoding.from_json(value)
        except SegmentationError as exc:
            raise CocoFormatError(f"{what}: {exc}") from exc
    if isinstance(value, list):
        try:
            return [[float(v) for v in poly] for poly in value]
        except (TypeError, ValueError) as exc:
            raise CocoFormatError(f"{what}: malformed polygon list") from exc
    raise CocoFormatError(f"{what}: unsupported segmentation {type(value).__name__}")


def _load_json(text: str | bytes) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CocoFormatError(f"malformed JSON: {exc}") from exc


def dataset_from_dict(data: dict) -> Dataset:
    """Build a dataset, rejecting duplicate ids and dangling references."""
    if not isinstance(data, dict):
        raise CocoFormatError("annotation file must contain a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise CocoFormatError(f"missing required array {key!r}")

    categories: dict[int, Category] = {}
    for rec in data["categories"]:
        _require(rec, ("id", "name"), "category")
        cid = int(rec["id"])
        if cid in categories:
            raise CocoFormatError(f"duplicate category id {cid}")
        categories[cid] = Category(cid, str(rec["name"]), str(rec.get("supercategory", "")))

    images: dict[int, ImageInfo] = {}
    for rec in data["images"]:
        _require(rec, ("id", "width", "height"), "image")
        iid = int(rec["id"])
        if iid in images:
            raise CocoFormatError(f"duplicate image id {iid}")
        images[iid] = ImageInfo(iid, int(rec["width"]), int(rec["height"]), str(rec.get("file_name", "")))

    annotations: list[Annotation] = []
    seen: set[int] = set()
    for rec in data["annotations"]:
        _require(rec, ("id", "image_id", "category_id", "bbox"), "annotation")
        aid = int(rec["id"])
        what = f"annotation {aid}"
        if aid in seen:
            raise CocoFormatError(f"duplicate annotation id {aid}")
        seen.add(aid)
        image_id = int(rec["image_id"])
        category_id = int(rec["category_id"])
        if image_id not in images:
            raise CocoFormatError(f"{what}: dangling image_id {image_id}")
        if category_id not in categories:
            raise CocoFormatError(f"{what}: dangling category_id {category_id}")
        bbox = _bbox(rec["bbox"], what)
        area = float(rec["area"]) if "area" in rec else bbox[2] * bbox[3]
        annotations.append(
            Annotation(
                id=aid,
                image_id=image_id,
                category_id=category_id,
                bbox=bbox,
                area=area,
                segmentation=_segmentation(rec.get("segmentation", []), what),
                iscrowd=bool(rec.get("iscrowd", 0)),
            )
        )
    return Dataset(tuple(images.values()), tuple(annotations), tuple(categories.values()))


def parse_dataset(text: str | bytes) -> Dataset:
    return dataset_from_dict(_load_json(text))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


def _segmentation_json(seg: Segmentation) -> Any:
    if isinstance(seg, RunLengthEncoding):
        return seg.to_json()
    return [list(poly) for poly in seg]


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
            for im in dataset.images
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": list(a.bbox),
                "area": a.area,
                "segmentation": _segmentation_json(a.segmentation),
                "iscrowd": int(a.iscrowd),
            }
            for a in dataset.annotations
        ],
        "categories": [
            {"id": c.id, "name": c.name, "supercategory": c.supercategory}
            for c in dataset.categories
        ],
    }


def write_dataset(dataset: Dataset) -> str:
    return json.dumps(dataset_to_dict(dataset))


def parse_detections(text: str | bytes, dataset: Dataset, *, lenient: bool = False) -> list[Detection]:
    """Parse a COCO result array, checking every record against ``dataset``.

    With ``lenient`` set, records for images missing from the dataset are kept;
    unknown categories and out-of-range scores are always rejected.
    """
    data = _load_json(text)
    if not isinstance(data, list):
        raise CocoFormatError("detection file must contain a JSON array")
    detections = []
    for idx, rec in enumerate(data):
        _require(rec, ("image_id", "category_id", "bbox", "score"), f"detection #{idx}")
        image_id = int(rec["image_id"])
        category_id = int(rec["category_id"])
        score = float(rec["score"])
        if not dataset.has_category(category_id):
            raise CocoFormatError(f"detection #{idx}: unknown category_id {category_id}")
        if not lenient and not dataset.has_image(image_id):
            raise CocoFormatError(f"detection #{idx}: unknown image_id {image_id}")
        if not 0.0 <= score <= 1.0:
            raise CocoFormatError(f"detection #{idx}: score {score} outside [0, 1]")
        detections.append(Detection(image_id, category_id, _bbox(rec["bbox"], f"detection #{idx}"), score))
    return detections


def load_detections(path, dataset: Dataset, *, lenient: bool = False) -> list[Detection]:
    with open(path, "rb") as fh:
        return parse_detections(fh.read(), dataset, lenient=lenient)


def write_detections(detections: Iterable[Detection]) -> str:
    return json.dumps(
        [
            {"image_id": d.image_id, "category_id": d.category_id, "bbox": list(d.bbox), "score": d.score}
            for d in detections
        ]
    )


def annotation_counts(dataset: Dataset) -> dict[int, int]:
    counts = Counter(a.category_id for a in dataset.annotations)
    return {cid: counts.get(cid, 0) for cid in dataset.category_ids}


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    entity: str
    entity_id: Any
    rule: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.severity}\t{self.entity} {self.entity_id}\t{self.rule}\t{self.message}"


def validate(dataset: Dataset) -> list[Violation]:
    """Check every type invariant; returns an empty list for a clean dataset.

    Boxes reaching past the image border are reported as warnings only, since
    COCO ground truth contains them.
    """
    out: list[Violation] = []

    def dupes(items, entity):
        for ident, n in Counter(items).items():
            if n > 1:
                out.append(Violation(entity, ident, "unique-id", f"id used {n} times"))

    dupes([c.id for c in dataset.categories], "category")
    dupes([im.id for im in dataset.images], "image")
    dupes([a.id for a in dataset.annotations], "annotation")
    for name, n in Counter(c.name for c in dataset.categories).items():
        if n > 1:
            out.append(Violation("category", name, "unique-name", f"name used {n} times"))

    for c in dataset.categories:
        if c.id <= 0:
            out.append(Violation("category", c.id, "positive-id", "id must be positive"))
        if not c.name:
            out.append(Violation("category", c.id, "non-empty-name", "name is empty"))
    for im in dataset.images:
        if im.id <= 0:
            out.append(Violation("image", im.id, "positive-id", "id must be positive"))
        if im.width < 1 or im.height < 1:
            out.append(Violation("image", im.id, "positive-size", f"size {im.width}x{im.height}"))

    for a in dataset.annotations:
        def flag(rule, msg, severity="error"):
            out.append(Violation("annotation", a.id, rule, msg, severity))

        if a.id <= 0:
            flag("positive-id", "id must be positive")
        image = dataset._images.get(a.image_id)
        if image is None:
            flag("image-ref", f"dangling image_id {a.image_id}")
        if not dataset.has_category(a.category_id):
            flag("category-ref", f"dangling category_id {a.category_id}")
        x, y, w, h = a.bbox
        if w <= 0 or h <= 0:
            flag("bbox-size", f"bbox width/height must be positive, got {w}x{h}")
        if x < 0 or y < 0:
            flag("bbox-origin", f"bbox origin ({x}, {y}) is negative")
        if image is not None and (x + w > image.width or y + h > image.height):
            flag("bbox-bounds", f"bbox extends past image {image.width}x{image.height}", "warning")
        if a.area <= 0:
            flag("area", f"area must be positive, got {a.area}")
        seg = a.segmentation
        if isinstance(seg, RunLengthEncoding):
            if image is not None and (seg.height, seg.width) != (image.height, image.width):
                flag("rle-size", f"RLE size {seg.height}x{seg.width} differs from image")
        else:
            if a.iscrowd:
                flag("crowd-rle", "crowd annotation must use RLE segmentation")
            for k, poly in enumerate(seg):
                if len(poly) < 6 or len(poly) % 2:
                    flag("polygon", f"polygon {k} has {len(poly)} coordinates")
    return out


def format_violations(violations: Iterable[Violation]) -> str:
    return "".join(f"{v}\n" for v in violations)
