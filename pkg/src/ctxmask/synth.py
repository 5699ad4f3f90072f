"""Synthetic scenes with planted co-occurrence and a scripted, context-aware detector.

Every random draw comes from ``numpy`` generators seeded by
``SeedSequence([seed, stream, index])``, so image ``i`` and annotation ``a``
get their own reproducible streams regardless of processing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .coco import Annotation, BBox, Category, Dataset, Detection, ImageInfo, write_dataset
from .evaluator import bbox_iou
from .masker import MaskManifest, build_category_mask
from .segm import mask_area

_IMAGE_STREAM = 0
_JITTER_STREAM = 1


@dataclass(frozen=True)
class SynthCategory:
    name: str
    color: tuple[int, int, int]
    instances: tuple[int, int] = (1, 2)
    size: tuple[int, int] = (8, 16)


@dataclass(frozen=True)
class Scene:
    categories: tuple[str, ...]
    images: int


@dataclass(frozen=True)
class ContextRule:
    subject: str
    context: str
    factor: float


@dataclass(frozen=True)
class FalsePositives:
    score: float = 0.5
    per_instance: int = 2


@dataclass
class DetectorScript:
    base_score: dict[str, float] = field(default_factory=dict)
    context_rules: list[ContextRule] = field(default_factory=list)
    false_positives: dict[str, FalsePositives] = field(default_factory=dict)
    jitter: int = 1
    seed: int = 0
    default_score: float = 0.9

    def __post_init__(self) -> None:
        for rule in self.context_rules:
            if not 0.0 <= rule.factor <= 1.0:
                raise ValueError(f"rule {rule}: factor must lie in [0, 1]")
        for name, score in self.base_score.items():
            if not 0.0 < score <= 1.0:
                raise ValueError(f"base score for {name} must lie in (0, 1]")

    def check_names(self, names) -> None:
        known = set(names)
        used = set(self.base_score) | set(self.false_positives)
        for rule in self.context_rules:
            used |= {rule.subject, rule.context}
        unknown = sorted(used - known)
        if unknown:
            raise ValueError(f"detector script references unknown categories {unknown}")


@dataclass
class SynthConfig:
    seed: int
    width: int
    height: int
    categories: list[SynthCategory]
    scenes: list[Scene]
    overlap: float = 0.0
    background: tuple[int, int, int] = (255, 255, 255)
    detector: DetectorScript = field(default_factory=DetectorScript)

    def __post_init__(self) -> None:
        colors = [c.color for c in self.categories]
        if len(set(colors)) != len(colors) or self.background in colors:
            raise ValueError("category colours must be distinct from each other and the background")
        if len({c.name for c in self.categories}) != len(self.categories):
            raise ValueError("category names must be unique")
        if not self.scenes:
            raise ValueError("at least one scene recipe is required")
        names = {c.name for c in self.categories}
        for scene in self.scenes:
            missing = set(scene.categories) - names
            if missing:
                raise ValueError(f"scene references unknown categories {sorted(missing)}")
        for c in self.categories:
            if c.size[1] > min(self.width, self.height) or c.size[0] < 1:
                raise ValueError(f"category {c.name}: size range {c.size} does not fit the image")
        self.detector.check_names(names)

    @classmethod
    def from_dict(cls, data: dict) -> SynthConfig:
        det = data.get("detector", {})
        script = DetectorScript(
            base_score={k: float(v) for k, v in det.get("base_score", {}).items()},
            context_rules=[ContextRule(s, c, float(f)) for s, c, f in det.get("context_rules", [])],
            false_positives={k: FalsePositives(**v) for k, v in det.get("false_positives", {}).items()},
            jitter=int(det.get("jitter", 1)),
            seed=int(det.get("seed", data.get("seed", 0))),
            default_score=float(det.get("default_score", 0.9)),
        )
        return cls(
            seed=int(data.get("seed", 0)),
            width=int(data["width"]),
            height=int(data["height"]),
            categories=[
                SynthCategory(
                    c["name"],
                    tuple(c["color"]),
                    tuple(c.get("instances", (1, 2))),
                    tuple(c.get("size", (8, 16))),
                )
                for c in data["categories"]
            ],
            scenes=[Scene(tuple(s["categories"]), int(s["images"])) for s in data["scenes"]],
            overlap=float(data.get("overlap", 0.0)),
            background=tuple(data.get("background", (255, 255, 255))),
            detector=script,
        )

    @classmethod
    def load(cls, path) -> SynthConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def _rect_polygon(x: int, y: int, w: int, h: int) -> list[list[float]]:
    return [[float(x), float(y), float(x + w), float(y), float(x + w), float(y + h), float(x), float(y + h)]]


def _overlaps(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    return a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]


def _place(rng, cfg: SynthConfig, cat: SynthCategory, placed: list) -> tuple[int, int, int, int]:
    w = int(rng.integers(cat.size[0], cat.size[1] + 1))
    h = int(rng.integers(cat.size[0], cat.size[1] + 1))
    if placed and cfg.overlap > 0 and rng.random() < cfg.overlap:
        # straddle the corner of an earlier box
        px, py, pw, ph = placed[int(rng.integers(len(placed)))]
        x = min(max(px + pw // 2, 0), cfg.width - w)
        y = min(max(py + ph // 2, 0), cfg.height - h)
        return x, y, w, h
    for _ in range(500):
        x = int(rng.integers(0, cfg.width - w + 1))
        y = int(rng.integers(0, cfg.height - h + 1))
        box = (x, y, w, h)
        if cfg.overlap > 0 or not any(_overlaps(box, p) for p in placed):
            return box
    raise ValueError(f"cannot place a non-overlapping {cat.name} in a {cfg.width}x{cfg.height} image")


def generate_synthetic(config: SynthConfig, out: Path | str) -> Dataset:
    """Render every scene to ``out/images`` and write ``out/annotations.json``."""
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    by_name = {c.name: c for c in config.categories}
    cat_ids = {c.name: i for i, c in enumerate(config.categories, 1)}

    images, anns = [], []
    index = 0
    for scene in config.scenes:
        for _ in range(scene.images):
            index += 1
            rng = _rng(config.seed, _IMAGE_STREAM, index)
            canvas = np.empty((config.height, config.width, 3), dtype=np.uint8)
            canvas[:] = config.background
            placed: list[tuple[int, int, int, int]] = []
            for name in scene.categories:
                cat = by_name[name]
                lo, hi = cat.instances
                for _ in range(max(1, int(rng.integers(lo, hi + 1)))):
                    x, y, w, h = _place(rng, config, cat, placed)
                    placed.append((x, y, w, h))
                    canvas[y : y + h, x : x + w] = cat.color
                    anns.append(
                        Annotation(
                            id=len(anns) + 1,
                            image_id=index,
                            category_id=cat_ids[name],
                            bbox=(float(x), float(y), float(w), float(h)),
                            area=float(w * h),
                            segmentation=_rect_polygon(x, y, w, h),
                        )
                    )
            file_name = f"{index:06d}.png"
            Image.fromarray(canvas).save(out / "images" / file_name, format="PNG")
            images.append(ImageInfo(index, config.width, config.height, file_name))

    categories = [Category(cat_ids[c.name], c.name, "synthetic") for c in config.categories]
    dataset = Dataset(tuple(images), tuple(anns), tuple(categories))
    (out / "annotations.json").write_text(write_dataset(dataset))
    return dataset


# -- scripted detector --------------------------------------------------------


def _jitter(bbox: BBox, ann_id: int, script: DetectorScript) -> BBox:
    if script.jitter <= 0:
        return bbox
    dx, dy, dw, dh = _rng(script.seed, _JITTER_STREAM, ann_id).integers(-script.jitter, script.jitter + 1, 4)
    x, y, w, h = bbox
    return (x + float(dx), y + float(dy), max(1.0, w + float(dw)), max(1.0, h + float(dh)))


def _fp_boxes(gts: list[BBox], size: tuple[float, float], count: int, width: int, height: int, used: set) -> list[BBox]:
    w, h = size
    step_x, step_y = max(1, int(w) // 2), max(1, int(h) // 2)
    out: list[BBox] = []
    for y in range(0, max(1, int(height - h) + 1), step_y):
        for x in range(0, max(1, int(width - w) + 1), step_x):
            if len(out) == count:
                return out
            box = (float(x), float(y), w, h)
            if box in used or any(bbox_iou(box, g) >= 0.1 for g in gts):
                continue
            used.add(box)
            out.append(box)
    while len(out) < count:
        # no room left inside the frame: park the box beyond the right edge
        box = (float(width + len(used) * (w + 1)), 0.0, w, h)
        used.add(box)
        out.append(box)
    return out


def scripted_detect(
    dataset: Dataset, manifest: MaskManifest | None, script: DetectorScript
) -> list[Detection]:
    """Detections a context-sensitive detector would emit on the (masked) images.

    Each visible ground-truth instance yields one jittered box scored
    ``base * prod(factors)`` over rules whose context category has no visible
    pixels. Instances of the masked category yield nothing. Configured
    categories additionally get false positives at a fixed score.
    """
    names = {c.id: c.name for c in dataset.categories}
    masked_id = manifest.masked_category_id if manifest else None
    dets: list[Detection] = []
    for image_id in dataset.image_ids:
        image = dataset.image(image_id)
        anns = sorted(dataset.anns_for_image(image_id), key=lambda a: a.id)
        visible: dict[str, int] = {}
        for cid in sorted({a.category_id for a in anns}):
            if cid == masked_id:
                record = manifest.record(image_id)
                visible[names[cid]] = record.skipped_overlap_pixel_count if record else 0
            else:
                visible[names[cid]] = mask_area(build_category_mask(dataset, image_id, cid))
        used: set = set()
        for ann in anns:
            if ann.category_id == masked_id or ann.iscrowd:
                continue
            name = names[ann.category_id]
            score = script.base_score.get(name, script.default_score)
            for rule in script.context_rules:
                if rule.subject == name and visible.get(rule.context, 0) == 0:
                    score *= rule.factor
            dets.append(Detection(image_id, ann.category_id, _jitter(ann.bbox, ann.id, script), min(score, 1.0)))
            fp = script.false_positives.get(name)
            if fp is not None and fp.per_instance > 0:
                gts = [a.bbox for a in anns if a.category_id == ann.category_id]
                for box in _fp_boxes(gts, ann.bbox[2:], fp.per_instance, image.width, image.height, used):
                    dets.append(Detection(image_id, ann.category_id, box, fp.score))
    return dets


def default_config(seed: int = 0) -> SynthConfig:
    """Four categories; A is scripted to need B in view."""
    return SynthConfig.from_dict(
        {
            "seed": seed,
            "width": 96,
            "height": 72,
            "categories": [
                {"name": "A", "color": [220, 40, 40], "instances": [1, 2], "size": [12, 20]},
                {"name": "B", "color": [40, 160, 40], "instances": [1, 2], "size": [12, 20]},
                {"name": "C", "color": [40, 60, 220], "instances": [1, 2], "size": [12, 20]},
                {"name": "D", "color": [230, 200, 30], "instances": [1, 1], "size": [12, 20]},
            ],
            "scenes": [
                {"categories": ["A", "B"], "images": 8},
                {"categories": ["A", "B", "C"], "images": 4},
                {"categories": ["C", "D"], "images": 6},
                {"categories": ["D"], "images": 4},
            ],
            "detector": {
                "base_score": {"A": 0.9, "B": 0.9, "C": 0.8, "D": 0.85},
                "context_rules": [["A", "B", 0.2]],
                "false_positives": {"A": {"score": 0.5, "per_instance": 2}},
                "jitter": 1,
            },
        }
    )


def config_to_dict(config: SynthConfig) -> dict:
    d = config.detector
    return {
        "seed": config.seed,
        "width": config.width,
        "height": config.height,
        "overlap": config.overlap,
        "background": list(config.background),
        "categories": [
            {"name": c.name, "color": list(c.color), "instances": list(c.instances), "size": list(c.size)}
            for c in config.categories
        ],
        "scenes": [{"categories": list(s.categories), "images": s.images} for s in config.scenes],
        "detector": {
            "base_score": d.base_score,
            "context_rules": [[r.subject, r.context, r.factor] for r in d.context_rules],
            "false_positives": {
                k: {"score": v.score, "per_instance": v.per_instance} for k, v in d.false_positives.items()
            },
            "jitter": d.jitter,
            "seed": d.seed,
            "default_score": d.default_score,
        },
    }

