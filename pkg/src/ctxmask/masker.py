"""Grey-out one category across a dataset's images, leaving other objects intact."""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .coco import Dataset
from .segm import ann_to_mask, empty_mask, mask_area, mask_subtract

log = logging.getLogger(__name__)

DEFAULT_GREY = (128, 128, 128)
RGB = tuple[int, int, int]


class MaskingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    masked_pixel_count: int
    skipped_overlap_pixel_count: int
    output_file_name: str


@dataclass
class MaskManifest:
    masked_category_id: int
    grey: RGB
    images: list[ImageRecord] = field(default_factory=list)
    image_format: str = "png"

    @property
    def total_masked_pixels(self) -> int:
        return sum(r.masked_pixel_count for r in self.images)

    @property
    def total_skipped_overlap_pixels(self) -> int:
        return sum(r.skipped_overlap_pixel_count for r in self.images)

    def record(self, image_id: int) -> ImageRecord | None:
        for r in self.images:
            if r.image_id == image_id:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "masked_category_id": self.masked_category_id,
            "grey": list(self.grey),
            "image_format": self.image_format,
            "images": [asdict(r) for r in self.images],
            "totals": {
                "masked_pixel_count": self.total_masked_pixels,
                "skipped_overlap_pixel_count": self.total_skipped_overlap_pixels,
                "images": len(self.images),
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> MaskManifest:
        return cls(
            masked_category_id=int(data["masked_category_id"]),
            grey=tuple(int(v) for v in data["grey"]),
            images=[ImageRecord(**r) for r in data["images"]],
            image_format=data.get("image_format", "png"),
        )


def manifest_path(out_root: Path | str, category_id: int) -> Path:
    return Path(out_root) / f"manifest_{category_id}.json"


def load_manifest(path: Path | str) -> MaskManifest:
    return MaskManifest.from_dict(json.loads(Path(path).read_text()))


def _union_of(dataset: Dataset, image_id: int, keep) -> np.ndarray:
    image = dataset.image(image_id)
    mask = empty_mask(image.height, image.width)
    for ann in dataset.anns_for_image(image_id):
        if keep(ann.category_id):
            m = ann_to_mask(ann, image)
            if not m.any():
                log.info("annotation %d in image %d has an empty mask", ann.id, image_id)
            mask |= m
    return mask


def build_category_mask(dataset: Dataset, image_id: int, category_id: int) -> np.ndarray:
    return _union_of(dataset, image_id, lambda c: c == category_id)


def build_exclusion_mask(dataset: Dataset, image_id: int, category_id: int) -> np.ndarray:
    return _union_of(dataset, image_id, lambda c: c != category_id)


def apply_grey(image: np.ndarray, region: np.ndarray, grey: RGB = DEFAULT_GREY) -> np.ndarray:
    """Return a copy of an ``(h, w, 3)`` uint8 image with ``region`` set to ``grey``."""
    if image.shape[:2] != region.shape:
        raise MaskingError(f"region {region.shape} does not match image {image.shape[:2]}")
    out = image.copy()
    out[region] = np.asarray(grey, dtype=out.dtype)
    return out


def read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _output_name(file_name: str, image_format: str) -> str:
    suffix = ".png" if image_format == "png" else ".jpg"
    return str(Path(file_name).with_suffix(suffix))


def mask_image(
    dataset: Dataset,
    image_id: int,
    category_id: int,
    images_root: Path,
    out_dir: Path,
    grey: RGB = DEFAULT_GREY,
    image_format: str = "png",
) -> ImageRecord:
    info = dataset.image(image_id)
    src = images_root / info.file_name
    out_name = _output_name(info.file_name, image_format)
    dst = out_dir / out_name
    category = build_category_mask(dataset, image_id, category_id)
    region = mask_subtract(category, build_exclusion_mask(dataset, image_id, category_id))
    masked = mask_area(region)
    skipped = mask_area(category) - masked
    try:
        dst.parent.mkdir(parents=True, exist_ok=True)
        with Image.open(src) as im:
            size = im.size
        if size != (info.width, info.height):
            raise MaskingError(
                f"image {image_id}: file is {size[0]}x{size[1]}, "
                f"annotation says {info.width}x{info.height}"
            )
        if masked == 0 and image_format == "png" and src.suffix.lower() == ".png":
            shutil.copyfile(src, dst)
        else:
            out = Image.fromarray(apply_grey(read_rgb(src), region, grey))
            if image_format == "png":
                out.save(dst, format="PNG")
            else:
                out.save(dst, format="JPEG", quality=95)
    except OSError as exc:
        raise MaskingError(f"image {image_id}: {exc}") from exc
    return ImageRecord(image_id, masked, skipped, out_name)


def generate_masked_dataset(
    dataset: Dataset,
    images_root: Path | str,
    category_id: int,
    grey: RGB = DEFAULT_GREY,
    out_root: Path | str = ".",
    *,
    jobs: int = 1,
    image_format: str = "png",
) -> MaskManifest:
    """Write the masked copy of every image to ``out_root/<category_id>/``.

    The manifest goes to ``out_root/manifest_<category_id>.json``. JPEG output
    is lossy, so pixel-identity outside the grey region only holds for PNG.
    """
    if image_format not in ("png", "jpeg"):
        raise ValueError(f"unsupported image format {image_format!r}")
    if image_format == "jpeg":
        log.warning("JPEG output re-encodes pixels; unmasked pixels will not be bit-identical")
    dataset.category(category_id)
    images_root, out_root = Path(images_root), Path(out_root)
    out_dir = out_root / str(category_id)
    grey = tuple(int(v) for v in grey)

    def work(image_id: int) -> ImageRecord:
        return mask_image(dataset, image_id, category_id, images_root, out_dir, grey, image_format)

    ids = dataset.image_ids
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(work, ids))
    else:
        records = [work(i) for i in ids]
    records.sort(key=lambda r: r.image_id)

    manifest = MaskManifest(category_id, grey, records, image_format)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
        manifest_path(out_root, category_id).write_text(json.dumps(manifest.to_dict(), indent=1))
    except OSError as exc:
        raise MaskingError(f"cannot write manifest: {exc}") from exc
    return manifest
