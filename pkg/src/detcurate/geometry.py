"""Box and mask geometry: IoU, RLE codec, union boxes, relative sizes.

All operations are pure and reentrant. Box IoU is computed analytically on
real-valued coordinates; mask IoU walks the RLE runs directly without
decoding full grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .datamodel import BBox, ImageRecord, MaskRLE


@dataclass(frozen=True)
class BitMask:
    """Dense binary mask; ``array`` is a row-major (height, width) bool grid."""

    array: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.array, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask grid must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "array", arr)

    @property
    def height(self) -> int:
        return int(self.array.shape[0])

    @property
    def width(self) -> int:
        return int(self.array.shape[1])

    def area(self) -> int:
        return int(self.array.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, BitMask) and np.array_equal(self.array, other.array)


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint, symmetric."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def rle_encode(m: BitMask) -> MaskRLE:
    """Encodes a mask as alternating background/foreground run lengths.

    The scan is column-major; the first run counts background pixels, so a
    mask beginning with foreground gets a leading zero.
    """
    flat = m.array.flatten(order="F")
    n = flat.size
    if n == 0:
        return MaskRLE(size=(m.height, m.width), counts=())
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate(([0], boundaries, [n])))
    counts = runs.tolist()
    if flat[0]:
        counts = [0] + counts
    return MaskRLE(size=(m.height, m.width), counts=tuple(int(c) for c in counts))


def rle_decode(r: MaskRLE) -> BitMask:
    """Inverse of :func:`rle_encode`; raises on counts not summing to h*w."""
    h, w = r.size
    total = sum(r.counts)
    if total != h * w:
        raise ValueError(f"RLE counts sum {total} != height*width {h * w}")
    values = np.zeros(len(r.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(r.counts, dtype=np.int64))
    return BitMask(flat.reshape((h, w), order="F"))


def _foreground_runs(r: MaskRLE) -> list[tuple[int, int]]:
    """Half-open [start, end) foreground intervals in column-major flat index."""
    runs = []
    pos = 0
    for i, c in enumerate(r.counts):
        if i % 2 == 1 and c > 0:
            runs.append((pos, pos + c))
        pos += c
    return runs


def mask_area(r: MaskRLE) -> int:
    return r.foreground_area()


def mask_iou(a: MaskRLE, b: MaskRLE) -> float:
    """Foreground IoU of two equal-size masks; 0.0 when both are empty."""
    if a.size != b.size:
        raise ValueError(f"mask size mismatch: {a.size} vs {b.size}")
    runs_a = _foreground_runs(a)
    runs_b = _foreground_runs(b)
    inter = 0
    i = j = 0
    while i < len(runs_a) and j < len(runs_b):
        lo = max(runs_a[i][0], runs_b[j][0])
        hi = min(runs_a[i][1], runs_b[j][1])
        if hi > lo:
            inter += hi - lo
        if runs_a[i][1] <= runs_b[j][1]:
            i += 1
        else:
            j += 1
    union = a.foreground_area() + b.foreground_area() - inter
    if union == 0:
        return 0.0
    return inter / union


def union_box(boxes: Sequence[BBox] | Iterable[BBox]) -> BBox:
    """Smallest axis-aligned box containing every input box."""
    boxes = list(boxes)
    if not boxes:
        raise ValueError("union_box requires at least one box")
    x0 = min(b.x for b in boxes)
    y0 = min(b.y for b in boxes)
    x1 = max(b.x + b.w for b in boxes)
    y1 = max(b.y + b.h for b in boxes)
    return BBox(x0, y0, x1 - x0, y1 - y0)


def relative_mask_size(mask_area: float, image: ImageRecord) -> float:
    """sqrt(mask area / image area); the scale statistic for an annotation."""
    image_area = image.width * image.height
    if image_area <= 0:
        raise ValueError(f"image {image.id} has zero area")
    if not 0 <= mask_area <= image_area:
        raise ValueError(f"mask area {mask_area} outside [0, {image_area}]")
    return float(np.sqrt(mask_area / image_area))
