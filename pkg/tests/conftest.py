from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from detcurate.datamodel import (
    BBox,
    Category,
    Dataset,
    Detection,
    GroundTruthAnnotation,
    ImageRecord,
)


def make_dataset(
    images: list[tuple[int, int, int]],
    annotations: list[tuple[int, int, int, tuple[float, float, float, float]]],
    categories: list[tuple[int, str]],
) -> Dataset:
    """Compact constructor: images (id, w, h), annotations
    (id, image_id, category_id, xywh), categories (id, name)."""
    return Dataset(
        images=[ImageRecord(id=i, width=w, height=h, file_name=f"{i}.jpg") for i, w, h in images],
        annotations=[
            GroundTruthAnnotation(
                id=a, image_id=img, category_id=c, bbox=BBox(*xywh), area=xywh[2] * xywh[3]
            )
            for a, img, c, xywh in annotations
        ],
        categories=[Category(id=c, name=name) for c, name in categories],
    )


def random_eval_instance(
    rng: np.random.Generator,
    max_images: int = 5,
    max_classes: int = 4,
    max_dets: int = 10,
) -> tuple[Dataset, list[Detection]]:
    """Small random dataset+detections pair for oracle-equivalence checks.

    Boxes carry sub-pixel jitter so IoU ties are vanishingly unlikely; around
    half the scores are quantized to one decimal to exercise tie handling in
    the precision/recall curves.
    """
    n_images = int(rng.integers(1, max_images + 1))
    n_classes = int(rng.integers(1, max_classes + 1))
    extent = 100

    images = [(i + 1, extent, extent) for i in range(n_images)]
    categories = [(c + 1, f"class-{c + 1}") for c in range(n_classes)]

    annotations = []
    ann_id = 1
    gt_boxes: list[tuple[int, int, BBox]] = []
    for img_id, _, _ in images:
        for _ in range(int(rng.integers(0, 4))):
            w = float(rng.uniform(8, 40))
            h = float(rng.uniform(8, 40))
            x = float(rng.uniform(0, extent - w))
            y = float(rng.uniform(0, extent - h))
            c = int(rng.integers(1, n_classes + 1))
            annotations.append((ann_id, img_id, c, (x, y, w, h)))
            gt_boxes.append((img_id, c, BBox(x, y, w, h)))
            ann_id += 1
    if not annotations:  # keep at least one class present
        annotations.append((1, 1, 1, (10.0, 10.0, 20.0, 20.0)))
        gt_boxes.append((1, 1, BBox(10.0, 10.0, 20.0, 20.0)))

    detections = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        score = float(rng.uniform(0, 1))
        if rng.random() < 0.5:
            score = round(score, 1)  # create score ties
        if rng.random() < 0.7 and gt_boxes:
            # Perturbed copy of a ground-truth box: IoU varies across thresholds.
            img_id, c, base = gt_boxes[int(rng.integers(0, len(gt_boxes)))]
            if rng.random() < 0.3:
                c = int(rng.integers(1, n_classes + 1))  # wrong class sometimes
            dx, dy = rng.uniform(-6, 6, size=2)
            dw, dh = rng.uniform(0.7, 1.3, size=2)
            box = BBox(
                min(max(base.x + dx, 0.0), extent - 2.0),
                min(max(base.y + dy, 0.0), extent - 2.0),
                max(base.w * dw, 1.0),
                max(base.h * dh, 1.0),
            )
        else:
            img_id = int(rng.integers(1, n_images + 1))
            c = int(rng.integers(1, n_classes + 1))
            w = float(rng.uniform(5, 40))
            h = float(rng.uniform(5, 40))
            box = BBox(float(rng.uniform(0, extent - w)), float(rng.uniform(0, extent - h)), w, h)
        detections.append(Detection(image_id=img_id, category_id=c, bbox=box, score=score))

    dataset = make_dataset(images, annotations, categories)
    return dataset, detections


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240901)
