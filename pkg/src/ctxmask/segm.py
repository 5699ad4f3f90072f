"""Segmentation rasters: COCO compressed RLE codec, polygon fill and mask algebra.

Binary masks are plain ``numpy`` boolean arrays of shape ``(height, width)``.
The COCO column-major pixel order is the Fortran-order flattening of such an
array, so pixel ``(r, c)`` sits at flat index ``c * height + r``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .coco import Annotation, ImageInfo

log = logging.getLogger(__name__)

Polygon = Sequence[float]


class SegmentationError(ValueError):
    """Raised for malformed RLE strings, polygons or mismatched mask shapes."""


@dataclass(frozen=True)
class RunLengthEncoding:
    """Run lengths over column-major pixels, starting with a background run."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height < 0 or self.width < 0:
            raise SegmentationError(f"negative RLE size {self.height}x{self.width}")
        if any(c < 0 for c in self.counts):
            raise SegmentationError("RLE counts must be non-negative")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise SegmentationError(
                f"RLE counts sum to {total}, expected {self.height * self.width}"
            )

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def to_string(self) -> str:
        return encode_counts(self.counts)

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": self.to_string()}

    @classmethod
    def from_json(cls, obj: dict) -> RunLengthEncoding:
        """Accept both compressed (string) and uncompressed (int list) counts."""
        try:
            height, width = (int(v) for v in obj["size"])
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SegmentationError(f"malformed RLE object: {exc}") from exc
        if isinstance(counts, (bytes, str)):
            return rle_decode(counts, height, width)
        return cls(height, width, tuple(int(c) for c in counts))


# -- compressed string codec -------------------------------------------------
#
# Each count is delta-coded against the count two positions back (from index 3
# onwards, as the reference COCO tooling does), then written as little-endian
# signed 5-bit groups; bit 0x20 flags a continuation, characters are offset
# by 48.


def encode_counts(counts: Sequence[int]) -> str:
    out: list[str] = []
    for i, count in enumerate(counts):
        value = int(count)
        if i > 2:
            value -= int(counts[i - 2])
        if -16 <= value < 16:
            # one character, no continuation
            out.append(chr((value & 0x1F) + 48))
            continue
        more = True
        while more:
            chunk = value & 0x1F
            value >>= 5
            more = value != -1 if chunk & 0x10 else value != 0
            if more:
                chunk |= 0x20
            out.append(chr(chunk + 48))
    return "".join(out)


def _read_value(encoded: str, pos: int) -> tuple[int, int]:
    """One signed value starting at ``pos``; returns it and the next offset."""
    value = 0
    shift = 0
    more = True
    while more:
        if pos >= len(encoded):
            raise SegmentationError(f"truncated RLE string at offset {pos}")
        chunk = ord(encoded[pos]) - 48
        if not 0 <= chunk < 64:
            raise SegmentationError(f"invalid RLE character {encoded[pos]!r}")
        pos += 1
        value |= (chunk & 0x1F) << shift
        more = bool(chunk & 0x20)
        shift += 5
        if not more and chunk & 0x10:
            value |= -1 << shift
    return value, pos


def decode_counts(encoded: str | bytes) -> list[int]:
    if isinstance(encoded, bytes):
        encoded = encoded.decode("ascii")
    counts: list[int] = []
    pos = 0
    while pos < len(encoded):
        chunk = ord(encoded[pos]) - 48
        if 0 <= chunk < 32:
            # single character value
            value = chunk - 32 if chunk & 0x10 else chunk
            pos += 1
        else:
            value, pos = _read_value(encoded, pos)
        if len(counts) > 2:
            value += counts[-2]
        if value < 0:
            raise SegmentationError(
                f"negative run length {value} at position {len(counts)}"
            )
        counts.append(value)
    return counts


def rle_decode(encoded: str | bytes, height: int, width: int) -> RunLengthEncoding:
    return RunLengthEncoding(height, width, tuple(decode_counts(encoded)))


def rle_from_mask(mask: np.ndarray) -> RunLengthEncoding:
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return RunLengthEncoding(height, width, ())
    # boundaries where the value flips; first run is always background
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RunLengthEncoding(height, width, tuple(runs))


def rle_encode(mask: np.ndarray) -> str:
    return rle_from_mask(mask).to_string()


def rle_to_mask(rle: RunLengthEncoding) -> np.ndarray:
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.height, rle.width), order="F")


# -- polygons -----------------------------------------------------------------


def rasterize_polygons(polygons: Sequence[Polygon], height: int, width: int) -> np.ndarray:
    """Fill polygons with the even-odd rule evaluated at pixel centres.

    Pixel ``(r, c)`` is set when ``(c + 0.5, r + 0.5)`` lies inside any polygon.
    Centres exactly on an edge follow the half-open crossing convention, so a
    rectangle with integer corners covers exactly ``w * h`` pixels.
    """
    mask = np.zeros((height, width), dtype=bool)
    if height == 0 or width == 0:
        for poly in polygons:
            _as_vertices(poly)
        return mask
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    for poly in polygons:
        verts = _as_vertices(poly)
        inside = np.zeros((height, width), dtype=bool)
        x0, y0 = verts[:, 0], verts[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        for ax, ay, bx, by in zip(x0, y0, x1, y1):
            if ay == by:
                continue
            # rows whose centre line crosses this edge (half-open in y)
            lo, hi = (ay, by) if ay < by else (by, ay)
            rows = (ys >= lo) & (ys < hi)
            if not rows.any():
                continue
            t = (ys[rows] - ay) / (by - ay)
            cross_x = ax + t * (bx - ax)
            inside[rows] ^= xs[None, :] < cross_x[:, None]
        mask |= inside
    return mask


def _as_vertices(poly: Polygon) -> np.ndarray:
    coords = np.asarray(poly, dtype=float).ravel()
    if coords.size % 2:
        raise SegmentationError(f"polygon has odd coordinate count {coords.size}")
    if coords.size < 6:
        raise SegmentationError(
            f"polygon needs at least 3 vertices, got {coords.size // 2}"
        )
    return coords.reshape(-1, 2)


def polygon_area(poly: Polygon) -> float:
    """Shoelace area of a simple polygon."""
    v = _as_vertices(poly)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_perimeter(poly: Polygon) -> float:
    v = _as_vertices(poly)
    return float(np.hypot(*(np.roll(v, -1, axis=0) - v).T).sum())


# -- mask algebra -------------------------------------------------------------


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise SegmentationError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def mask_union(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return np.logical_or(a, b)


def mask_subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return np.logical_and(a, np.logical_not(b))


def mask_area(a: np.ndarray) -> int:
    return int(np.count_nonzero(a))


def empty_mask(height: int, width: int) -> np.ndarray:
    return np.zeros((height, width), dtype=bool)


def ann_to_mask(ann: Annotation, image: ImageInfo) -> np.ndarray:
    """Rasterise one annotation's segmentation at its image's resolution."""
    seg = ann.segmentation
    if isinstance(seg, RunLengthEncoding):
        if (seg.height, seg.width) != (image.height, image.width):
            raise SegmentationError(
                f"annotation {ann.id}: RLE size {seg.height}x{seg.width} does not "
                f"match image {image.id} size {image.height}x{image.width}"
            )
        return rle_to_mask(seg)
    return rasterize_polygons(seg, image.height, image.width)
