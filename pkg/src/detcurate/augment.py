"""Training-time augmentations for detection samples.

A :class:`Sample` bundles an RGB raster with parallel lists of boxes, masks
and labels. Transforms keep those lists aligned, resample rasters bilinearly
and masks with nearest-neighbor so masks stay binary, and are pure given an
explicit random generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import cv2
import numpy as np

from .datamodel import BBox
from .geometry import BitMask, union_box


@dataclass(frozen=True)
class PhotometricConfig:
    """SSD-style photometric distortion ranges; each step fires independently."""

    brightness_delta: float = 32.0
    contrast_range: tuple[float, float] = (0.5, 1.5)
    saturation_range: tuple[float, float] = (0.5, 1.5)
    hue_delta: float = 18.0
    step_probability: float = 0.5


@dataclass(frozen=True)
class AugmentConfig:
    flip_probability: float = 0.5
    photometric_probability: float = 0.5
    crop_probability: float = 0.5
    jitter_probability: float = 0.5
    jitter_scale_range: tuple[float, float] = (0.1, 2.0)
    pad_value: tuple[int, int, int] = (128, 128, 128)
    random_anchor: bool = False
    seed: int = 0
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)

    def __post_init__(self):
        for p in (
            self.flip_probability,
            self.photometric_probability,
            self.crop_probability,
            self.jitter_probability,
        ):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        lo, hi = self.jitter_scale_range
        if lo <= 0 or lo >= hi:
            raise ValueError(f"jitter scale range must be positive with min < max, got {self.jitter_scale_range}")


@dataclass(frozen=True)
class Sample:
    """One image with its parallel boxes, masks and category labels."""

    raster: np.ndarray  # (H, W, 3) uint8 RGB
    boxes: tuple[BBox, ...]
    masks: tuple[BitMask, ...]
    labels: tuple[int, ...]

    def __init__(self, raster, boxes=(), masks=(), labels=()):
        object.__setattr__(self, "raster", np.asarray(raster, dtype=np.uint8))
        object.__setattr__(self, "boxes", tuple(boxes))
        object.__setattr__(self, "masks", tuple(masks))
        object.__setattr__(self, "labels", tuple(labels))

    @property
    def height(self) -> int:
        return int(self.raster.shape[0])

    @property
    def width(self) -> int:
        return int(self.raster.shape[1])


def validate_sample(s: Sample) -> list[str]:
    """Structural checks: parallel lists, mask extents, boxes inside canvas."""
    problems = []
    if s.raster.ndim != 3 or s.raster.shape[2] != 3:
        problems.append(f"raster must be (H, W, 3), got {s.raster.shape}")
    if not len(s.boxes) == len(s.masks) == len(s.labels):
        problems.append(
            f"parallel lists differ: {len(s.boxes)} boxes, {len(s.masks)} masks, {len(s.labels)} labels"
        )
    for i, m in enumerate(s.masks):
        if (m.height, m.width) != (s.height, s.width):
            problems.append(f"mask {i}: extent {(m.height, m.width)} != raster {(s.height, s.width)}")
    for i, b in enumerate(s.boxes):
        if b.w <= 0 or b.h <= 0:
            problems.append(f"box {i}: non-positive extent")
        elif b.x < 0 or b.y < 0 or b.x + b.w > s.width or b.y + b.h > s.height:
            problems.append(f"box {i}: outside canvas")
    return problems


def horizontal_flip(s: Sample) -> Sample:
    """Mirrors raster, boxes and masks about the vertical axis."""
    flipped_boxes = tuple(BBox(s.width - b.x - b.w, b.y, b.w, b.h) for b in s.boxes)
    return Sample(
        raster=s.raster[:, ::-1].copy(),
        boxes=flipped_boxes,
        masks=tuple(BitMask(m.array[:, ::-1].copy()) for m in s.masks),
        labels=s.labels,
    )


def adjust_brightness(raster: np.ndarray, delta: float) -> np.ndarray:
    """Adds a constant to every channel, clamped to [0, 255]."""
    out = raster.astype(np.float32) + delta
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def adjust_contrast(raster: np.ndarray, factor: float) -> np.ndarray:
    out = raster.astype(np.float32) * factor
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _rgb_to_hsv(raster: np.ndarray) -> np.ndarray:
    return cv2.cvtColor(raster.astype(np.float32) / 255.0, cv2.COLOR_RGB2HSV)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB) * 255.0
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def adjust_saturation(raster: np.ndarray, factor: float) -> np.ndarray:
    hsv = _rgb_to_hsv(raster)
    hsv[:, :, 1] = np.clip(hsv[:, :, 1] * factor, 0.0, 1.0)
    return _hsv_to_rgb(hsv)


def adjust_hue(raster: np.ndarray, degrees: float) -> np.ndarray:
    hsv = _rgb_to_hsv(raster)
    hsv[:, :, 0] = (hsv[:, :, 0] + degrees) % 360.0
    return _hsv_to_rgb(hsv)


def photometric_distortion(
    s: Sample, rng: np.random.Generator, cfg: PhotometricConfig | None = None
) -> Sample:
    """Randomly perturbs pixel values; geometry and labels are untouched.

    Steps run in a fixed order (brightness, contrast, saturation, hue), each
    with ``step_probability``; identity-parameter steps are skipped so a
    zero-magnitude config leaves the raster bit-exact.
    """
    cfg = cfg or PhotometricConfig()
    raster = s.raster
    if cfg.brightness_delta != 0 and rng.random() < cfg.step_probability:
        raster = adjust_brightness(raster, float(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)))
    if cfg.contrast_range != (1.0, 1.0) and rng.random() < cfg.step_probability:
        raster = adjust_contrast(raster, float(rng.uniform(*cfg.contrast_range)))
    if cfg.saturation_range != (1.0, 1.0) and rng.random() < cfg.step_probability:
        raster = adjust_saturation(raster, float(rng.uniform(*cfg.saturation_range)))
    if cfg.hue_delta != 0 and rng.random() < cfg.step_probability:
        raster = adjust_hue(raster, float(rng.uniform(-cfg.hue_delta, cfg.hue_delta)))
    return replace(s, raster=raster)


def _resize_mask_nearest(mask: BitMask, new_h: int, new_w: int) -> BitMask:
    ys = np.minimum(np.floor(np.arange(new_h) * (mask.height / new_h)).astype(int), mask.height - 1)
    xs = np.minimum(np.floor(np.arange(new_w) * (mask.width / new_w)).astype(int), mask.width - 1)
    return BitMask(mask.array[np.ix_(ys, xs)])


def large_scale_jitter(
    s: Sample, scale: float, cfg: AugmentConfig, anchor: tuple[int, int] = (0, 0)
) -> Sample:
    """Resizes content by ``scale`` inside a canvas of the original extent.

    Shrunken content is placed at ``anchor`` against constant padding; grown
    content is cropped to the canvas window starting there (negative anchor
    offsets shift the window). Boxes and masks follow the content; boxes
    whose intersection with the canvas drops below one pixel in either
    dimension are removed together with their masks and labels.
    """
    lo, hi = cfg.jitter_scale_range
    if not lo <= scale <= hi:
        raise ValueError(f"scale {scale} outside configured range [{lo}, {hi}]")
    h, w = s.height, s.width
    new_h = max(1, round(h * scale))
    new_w = max(1, round(w * scale))
    sy, sx = new_h / h, new_w / w
    ax, ay = anchor

    if (new_h, new_w) == (h, w) and (ax, ay) == (0, 0):
        return s  # geometry-exact identity

    resized = cv2.resize(s.raster, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    canvas = np.empty((h, w, 3), dtype=np.uint8)
    canvas[:, :] = np.asarray(cfg.pad_value, dtype=np.uint8)
    src_x0, src_y0 = max(0, -ax), max(0, -ay)
    dst_x0, dst_y0 = max(0, ax), max(0, ay)
    cw = min(new_w - src_x0, w - dst_x0)
    ch = min(new_h - src_y0, h - dst_y0)
    if cw > 0 and ch > 0:
        canvas[dst_y0 : dst_y0 + ch, dst_x0 : dst_x0 + cw] = resized[
            src_y0 : src_y0 + ch, src_x0 : src_x0 + cw
        ]

    boxes: list[BBox] = []
    masks: list[BitMask] = []
    labels: list[int] = []
    for box, mask, label in zip(s.boxes, s.masks, s.labels):
        x0 = max(box.x * sx + ax, 0.0)
        y0 = max(box.y * sy + ay, 0.0)
        x1 = min((box.x + box.w) * sx + ax, float(w))
        y1 = min((box.y + box.h) * sy + ay, float(h))
        if x1 - x0 < 1.0 or y1 - y0 < 1.0:
            continue
        boxes.append(BBox(x0, y0, x1 - x0, y1 - y0))
        grown = _resize_mask_nearest(mask, new_h, new_w)
        mask_canvas = np.zeros((h, w), dtype=bool)
        if cw > 0 and ch > 0:
            mask_canvas[dst_y0 : dst_y0 + ch, dst_x0 : dst_x0 + cw] = grown.array[
                src_y0 : src_y0 + ch, src_x0 : src_x0 + cw
            ]
        masks.append(BitMask(mask_canvas))
        labels.append(label)

    return Sample(raster=canvas, boxes=boxes, masks=masks, labels=labels)


def box_crop(s: Sample) -> Sample:
    """Crops the sample to the smallest box containing all boxes.

    The crop window is the integral hull of the union box intersected with
    the canvas, so the operation is idempotent and boxes never fall outside
    the new canvas.
    """
    if not s.boxes:
        raise ValueError("box_crop requires at least one box")
    ub = union_box(s.boxes)
    x0 = max(0, int(np.floor(ub.x)))
    y0 = max(0, int(np.floor(ub.y)))
    x1 = min(s.width, int(np.ceil(ub.x + ub.w)))
    y1 = min(s.height, int(np.ceil(ub.y + ub.h)))
    return Sample(
        raster=s.raster[y0:y1, x0:x1].copy(),
        boxes=tuple(BBox(b.x - x0, b.y - y0, b.w, b.h) for b in s.boxes),
        masks=tuple(BitMask(m.array[y0:y1, x0:x1].copy()) for m in s.masks),
        labels=s.labels,
    )


def apply_pipeline(s: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Applies flip, photometric, box-crop and jitter, each with its probability.

    Draw protocol (fixed, so runs are reproducible and composable): four
    coins via ``rng.random(4)``, then four child generators via
    ``rng.spawn(4)``; transform i consumes only child i. Samples without
    boxes skip the crop.
    """
    coins = rng.random(4)
    streams = rng.spawn(4)
    out = s
    if coins[0] < cfg.flip_probability:
        out = horizontal_flip(out)
    if coins[1] < cfg.photometric_probability:
        out = photometric_distortion(out, streams[1], cfg.photometric)
    if coins[2] < cfg.crop_probability and out.boxes:
        out = box_crop(out)
    if coins[3] < cfg.jitter_probability:
        jitter_rng = streams[3]
        scale = float(jitter_rng.uniform(*cfg.jitter_scale_range))
        anchor = (0, 0)
        if cfg.random_anchor:
            h, w = out.height, out.width
            new_w, new_h = round(w * scale), round(h * scale)
            ax_max, ay_max = w - new_w, h - new_h
            ax = int(jitter_rng.integers(min(0, ax_max), max(0, ax_max) + 1))
            ay = int(jitter_rng.integers(min(0, ay_max), max(0, ay_max) + 1))
            anchor = (ax, ay)
        out = large_scale_jitter(out, scale, cfg, anchor)
    return out


def batch_apply(
    samples: Sequence[Sample], cfg: AugmentConfig, seed: int | None = None
) -> list[Sample]:
    """Augments each sample with an independent generator derived per index."""
    root = np.random.SeedSequence(cfg.seed if seed is None else seed)
    children = root.spawn(len(samples))
    return [
        apply_pipeline(s, cfg, np.random.default_rng(child))
        for s, child in zip(samples, children)
    ]
