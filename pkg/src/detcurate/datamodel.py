"""Core dataset and prediction types with COCO-style JSON input/output.

Annotation files follow the COCO dialect: ``images`` / ``annotations`` /
``categories`` arrays with segmentation masks stored as uncompressed RLE
(column-major scan starting with a background run). Detection results follow
the COCO results-array format. Serialization is canonical: records sorted by
id, fixed key order, so saving the same dataset twice is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class DatasetParseError(ValueError):
    """Raised when an annotation or results file cannot be parsed."""


class DatasetValidationError(ValueError):
    """Raised when a dataset violates structural invariants."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: str = ""


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixels, top-left origin, x right, y down."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        # Canonical serialization needs type-stable fields.
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, xywh: list[float]) -> "BBox":
        if len(xywh) != 4:
            raise DatasetParseError(f"bbox must have 4 entries, got {len(xywh)}")
        return cls(float(xywh[0]), float(xywh[1]), float(xywh[2]), float(xywh[3]))


@dataclass(frozen=True)
class MaskRLE:
    """Run-length encoded binary mask.

    ``counts`` alternates background/foreground run lengths over a
    column-major scan of the mask, starting with a background run (a leading
    0 means the mask begins with foreground).
    """

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    @property
    def height(self) -> int:
        return self.size[0]

    @property
    def width(self) -> int:
        return self.size[1]

    def foreground_area(self) -> int:
        return int(sum(self.counts[1::2]))

    def to_json(self) -> dict[str, Any]:
        return {"size": [self.size[0], self.size[1]], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "MaskRLE":
        try:
            size = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError) as exc:
            raise DatasetParseError(f"malformed RLE segmentation: {obj!r}") from exc
        if isinstance(counts, str):
            # Packed-string counts (compressed COCO RLE) are not supported.
            raise DatasetParseError(
                "compressed string RLE counts are not supported; expected a list of run lengths"
            )
        return cls(size=(int(size[0]), int(size[1])), counts=tuple(int(c) for c in counts))


@dataclass(frozen=True)
class GroundTruthAnnotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    area: float
    mask: MaskRLE | None = None

    def __post_init__(self):
        object.__setattr__(self, "area", float(self.area))


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: BBox
    score: float
    mask: MaskRLE | None = None

    def __post_init__(self):
        object.__setattr__(self, "score", float(self.score))


@dataclass(frozen=True)
class Dataset:
    """Immutable COCO-style dataset: images, annotations and categories."""

    images: tuple[ImageRecord, ...]
    annotations: tuple[GroundTruthAnnotation, ...]
    categories: tuple[Category, ...]

    def __init__(
        self,
        images: tuple[ImageRecord, ...] | list[ImageRecord] = (),
        annotations: tuple[GroundTruthAnnotation, ...] | list[GroundTruthAnnotation] = (),
        categories: tuple[Category, ...] | list[Category] = (),
    ):
        object.__setattr__(self, "images", tuple(images))
        object.__setattr__(self, "annotations", tuple(annotations))
        object.__setattr__(self, "categories", tuple(categories))

    def image_by_id(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    def category_by_id(self) -> dict[int, Category]:
        return {c.id: c for c in self.categories}


def _validate_rle(rle: MaskRLE, owner: str) -> list[str]:
    problems = []
    h, w = rle.size
    if any(c < 0 for c in rle.counts):
        problems.append(f"{owner}: RLE has negative run length")
    if sum(rle.counts) != h * w:
        problems.append(
            f"{owner}: RLE counts sum {sum(rle.counts)} != height*width {h * w}"
        )
    # Only a single leading zero (foreground-first mask) is canonical.
    if any(c == 0 for c in rle.counts[1:]):
        problems.append(f"{owner}: RLE has a zero run after the first position")
    return problems


def validate(d: Dataset) -> list[str]:
    """Checks every structural invariant; returns one description per violation.

    Pure: the same dataset always yields the same list. An empty list means
    the dataset is valid.
    """
    problems: list[str] = []

    seen_cat: set[int] = set()
    for c in d.categories:
        if c.id <= 0:
            problems.append(f"category {c.id}: id must be positive")
        if c.id in seen_cat:
            problems.append(f"category {c.id}: duplicate id")
        seen_cat.add(c.id)
        if not c.name:
            problems.append(f"category {c.id}: empty name")

    seen_img: set[int] = set()
    for im in d.images:
        if im.id <= 0:
            problems.append(f"image {im.id}: id must be positive")
        if im.id in seen_img:
            problems.append(f"image {im.id}: duplicate id")
        seen_img.add(im.id)
        if im.width < 1 or im.height < 1:
            problems.append(f"image {im.id}: width and height must be >= 1")

    images = d.image_by_id()
    seen_ann: set[int] = set()
    for a in d.annotations:
        if a.id <= 0:
            problems.append(f"annotation {a.id}: id must be positive")
        if a.id in seen_ann:
            problems.append(f"annotation {a.id}: duplicate id")
        seen_ann.add(a.id)
        if a.image_id not in images:
            problems.append(f"annotation {a.id}: unknown image_id {a.image_id}")
        if a.category_id not in seen_cat:
            problems.append(f"annotation {a.id}: unknown category_id {a.category_id}")
        if a.bbox.w <= 0 or a.bbox.h <= 0:
            problems.append(f"annotation {a.id}: bbox has non-positive extent")
        elif a.image_id in images:
            im = images[a.image_id]
            if (
                a.bbox.x < 0
                or a.bbox.y < 0
                or a.bbox.x + a.bbox.w > im.width
                or a.bbox.y + a.bbox.h > im.height
            ):
                problems.append(f"annotation {a.id}: bbox outside image {im.id} bounds")
        if a.mask is not None:
            problems.extend(_validate_rle(a.mask, f"annotation {a.id}"))
            if a.image_id in images:
                im = images[a.image_id]
                if a.mask.size != (im.height, im.width):
                    problems.append(
                        f"annotation {a.id}: mask size {a.mask.size} != image extent "
                        f"({im.height}, {im.width})"
                    )
            if sum(a.mask.counts) == a.mask.height * a.mask.width:
                fg = a.mask.foreground_area()
                if a.area != fg:
                    problems.append(
                        f"annotation {a.id}: area {a.area} != mask foreground {fg}"
                    )
    return problems


def _parse_image(obj: dict[str, Any]) -> ImageRecord:
    try:
        return ImageRecord(
            id=int(obj["id"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            file_name=str(obj["file_name"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"malformed image record: {obj!r}") from exc


def _parse_annotation(obj: dict[str, Any]) -> GroundTruthAnnotation:
    try:
        bbox = BBox.from_list(obj["bbox"])
        mask = MaskRLE.from_json(obj["segmentation"]) if obj.get("segmentation") else None
        area = obj.get("area")
        if area is None:
            # Relative-size statistics need an area; fall back to the mask
            # pixel count, else the box area.
            area = float(mask.foreground_area()) if mask is not None else bbox.area
        return GroundTruthAnnotation(
            id=int(obj["id"]),
            image_id=int(obj["image_id"]),
            category_id=int(obj["category_id"]),
            bbox=bbox,
            area=float(area),
            mask=mask,
        )
    except DatasetParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"malformed annotation record: {obj!r}") from exc


def _parse_category(obj: dict[str, Any]) -> Category:
    try:
        return Category(
            id=int(obj["id"]),
            name=str(obj["name"]),
            supercategory=str(obj.get("supercategory", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"malformed category record: {obj!r}") from exc


def load_dataset(path: str | Path) -> Dataset:
    """Loads a COCO-style annotation file and validates it.

    Unknown fields are ignored. A missing ``area`` is recomputed from the
    mask (or the box). Raises :class:`DatasetParseError` on malformed input
    and :class:`DatasetValidationError` when references do not resolve.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise DatasetParseError(f"{path}: expected a JSON object at the top level")

    d = Dataset(
        images=[_parse_image(o) for o in raw.get("images", [])],
        annotations=[_parse_annotation(o) for o in raw.get("annotations", [])],
        categories=[_parse_category(o) for o in raw.get("categories", [])],
    )
    problems = validate(d)
    if problems:
        raise DatasetValidationError(problems)
    return d


def load_detections(path: str | Path) -> list[Detection]:
    """Loads a COCO results array, preserving order and exact scores."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DatasetParseError(f"{path}: expected a JSON array of results")

    dets: list[Detection] = []
    for i, obj in enumerate(raw):
        try:
            score = float(obj["score"])
            det = Detection(
                image_id=int(obj["image_id"]),
                category_id=int(obj["category_id"]),
                bbox=BBox.from_list(obj["bbox"]),
                score=score,
                mask=MaskRLE.from_json(obj["segmentation"]) if obj.get("segmentation") else None,
            )
        except DatasetParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"result #{i}: malformed record: {obj!r}") from exc
        if not 0.0 <= score <= 1.0:
            raise DatasetParseError(f"result #{i}: score {score} outside [0, 1]")
        dets.append(det)
    return dets


def _annotation_to_json(a: GroundTruthAnnotation) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": a.id,
        "image_id": a.image_id,
        "category_id": a.category_id,
        "bbox": a.bbox.as_list(),
        "area": a.area,
    }
    if a.mask is not None:
        obj["segmentation"] = a.mask.to_json()
    return obj


def dataset_to_json(d: Dataset) -> dict[str, Any]:
    """Canonical JSON form: images/annotations/categories sorted by id."""
    return {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
            for im in sorted(d.images, key=lambda im: im.id)
        ],
        "annotations": [
            _annotation_to_json(a) for a in sorted(d.annotations, key=lambda a: a.id)
        ],
        "categories": [
            {"id": c.id, "name": c.name, "supercategory": c.supercategory}
            for c in sorted(d.categories, key=lambda c: c.id)
        ],
    }


def save_dataset(d: Dataset, path: str | Path) -> None:
    """Writes the canonical serialization; requires a dataset passing validate()."""
    problems = validate(d)
    if problems:
        raise DatasetValidationError(problems)
    path = Path(path)
    path.write_text(json.dumps(dataset_to_json(d), indent=2) + "\n", encoding="utf-8")


def detections_to_json(dets: list[Detection]) -> list[dict[str, Any]]:
    out = []
    for det in dets:
        obj: dict[str, Any] = {
            "image_id": det.image_id,
            "category_id": det.category_id,
            "bbox": det.bbox.as_list(),
            "score": det.score,
        }
        if det.mask is not None:
            obj["segmentation"] = det.mask.to_json()
        out.append(obj)
    return out


def save_detections(dets: list[Detection], path: str | Path) -> None:
    Path(path).write_text(json.dumps(detections_to_json(dets), indent=2) + "\n", encoding="utf-8")
