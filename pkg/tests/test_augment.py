from __future__ import annotations

import numpy as np
import pytest

from detcurate.augment import (
    AugmentConfig,
    PhotometricConfig,
    Sample,
    adjust_brightness,
    apply_pipeline,
    box_crop,
    horizontal_flip,
    large_scale_jitter,
    photometric_distortion,
    validate_sample,
)
from detcurate.datamodel import BBox
from detcurate.geometry import BitMask


def rect_mask(h: int, w: int, box: BBox) -> BitMask:
    grid = np.zeros((h, w), dtype=bool)
    grid[int(box.y) : int(box.y + box.h), int(box.x) : int(box.x + box.w)] = True
    return BitMask(grid)


def demo_sample(seed: int = 0, h: int = 60, w: int = 80) -> Sample:
    rng = np.random.default_rng(seed)
    raster = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    boxes = (BBox(10, 10, 20, 16), BBox(40, 30, 24, 20))
    masks = tuple(rect_mask(h, w, b) for b in boxes)
    return Sample(raster=raster, boxes=boxes, masks=masks, labels=(1, 2))


class TestHorizontalFlip:
    def test_double_flip_is_identity(self):
        s = demo_sample()
        back = horizontal_flip(horizontal_flip(s))
        assert np.array_equal(back.raster, s.raster)
        assert back.boxes == s.boxes
        assert all(np.array_equal(a.array, b.array) for a, b in zip(back.masks, s.masks))
        assert back.labels == s.labels

    def test_box_coordinate_arithmetic(self):
        raster = np.zeros((4, 4, 3), dtype=np.uint8)
        s = Sample(raster=raster, boxes=(BBox(0, 0, 2, 4),), masks=(rect_mask(4, 4, BBox(0, 0, 2, 4)),), labels=(1,))
        flipped = horizontal_flip(s)
        assert flipped.boxes[0] == BBox(2, 0, 2, 4)

    def test_centered_box_unchanged(self):
        raster = np.zeros((10, 10, 3), dtype=np.uint8)
        centered = BBox(3, 2, 4, 6)
        s = Sample(raster=raster, boxes=(centered,), masks=(rect_mask(10, 10, centered),), labels=(1,))
        assert horizontal_flip(s).boxes[0] == centered

    def test_mask_mirrors_with_raster(self):
        s = demo_sample()
        flipped = horizontal_flip(s)
        for orig, new in zip(s.masks, flipped.masks):
            assert np.array_equal(new.array, orig.array[:, ::-1])


class TestPhotometricDistortion:
    ZERO = PhotometricConfig(
        brightness_delta=0.0,
        contrast_range=(1.0, 1.0),
        saturation_range=(1.0, 1.0),
        hue_delta=0.0,
        step_probability=1.0,
    )

    def test_zero_magnitude_is_identity(self):
        s = demo_sample()
        out = photometric_distortion(s, np.random.default_rng(0), self.ZERO)
        assert np.array_equal(out.raster, s.raster)

    def test_geometry_untouched(self):
        s = demo_sample()
        out = photometric_distortion(s, np.random.default_rng(1))
        assert out.boxes == s.boxes
        assert out.labels == s.labels
        assert all(np.array_equal(a.array, b.array) for a, b in zip(out.masks, s.masks))

    def test_brightness_delta_shifts_constant_image(self):
        raster = np.full((8, 8, 3), 100, dtype=np.uint8)
        assert np.array_equal(adjust_brightness(raster, 10.0), np.full((8, 8, 3), 110, dtype=np.uint8))

    def test_output_clamped(self):
        raster = np.full((4, 4, 3), 250, dtype=np.uint8)
        out = adjust_brightness(raster, 32.0)
        assert out.max() == 255


class TestLargeScaleJitter:
    CFG = AugmentConfig()

    def test_scale_one_is_identity(self):
        s = demo_sample()
        out = large_scale_jitter(s, 1.0, self.CFG)
        assert np.array_equal(out.raster, s.raster)
        assert out.boxes == s.boxes

    def test_half_scale_box_and_padding(self):
        raster = np.full((200, 200, 3), 200, dtype=np.uint8)
        box = BBox(0, 0, 100, 100)
        s = Sample(raster=raster, boxes=(box,), masks=(rect_mask(200, 200, box),), labels=(1,))
        out = large_scale_jitter(s, 0.5, self.CFG)
        assert (out.height, out.width) == (200, 200)
        assert out.boxes[0] == BBox(0, 0, 50, 50)
        # Bottom-right quadrant is padding.
        assert (out.raster[150:, 150:] == np.array(self.CFG.pad_value, dtype=np.uint8)).all()

    def test_scale_two_drops_box_outside_window(self):
        raster = np.zeros((100, 100, 3), dtype=np.uint8)
        inside = BBox(5, 5, 20, 20)  # stays in the kept top-left window
        outside = BBox(80, 80, 15, 15)  # lands beyond 100px after 2x
        s = Sample(
            raster=raster,
            boxes=(inside, outside),
            masks=(rect_mask(100, 100, inside), rect_mask(100, 100, outside)),
            labels=(7, 8),
        )
        out = large_scale_jitter(s, 2.0, self.CFG)
        assert out.labels == (7,)
        assert len(out.boxes) == len(out.masks) == 1
        assert out.boxes[0] == BBox(10, 10, 40, 40)

    def test_mask_area_scales_quadratically(self):
        raster = np.zeros((200, 200, 3), dtype=np.uint8)
        shrink_box = BBox(20, 20, 100, 80)
        grow_box = BBox(10, 10, 40, 30)  # stays inside the window at 2x
        for box, scale in ((shrink_box, 0.5), (shrink_box, 0.25), (grow_box, 2.0)):
            s = Sample(raster=raster, boxes=(box,), masks=(rect_mask(200, 200, box),), labels=(1,))
            out = large_scale_jitter(s, scale, self.CFG)
            expected = box.w * box.h * scale * scale
            assert out.masks[0].area() == pytest.approx(expected, rel=0.02)

    def test_invariants_preserved(self):
        s = demo_sample()
        for scale in (0.3, 0.77, 1.4, 2.0):
            assert validate_sample(large_scale_jitter(s, scale, self.CFG)) == []

    def test_out_of_range_scale_rejected(self):
        with pytest.raises(ValueError, match="outside configured range"):
            large_scale_jitter(demo_sample(), 3.0, self.CFG)


class TestBoxCrop:
    def test_single_box_becomes_canvas(self):
        raster = np.random.default_rng(0).integers(0, 255, (50, 50, 3), dtype=np.uint8)
        box = BBox(10, 10, 20, 20)
        s = Sample(raster=raster, boxes=(box,), masks=(rect_mask(50, 50, box),), labels=(1,))
        out = box_crop(s)
        assert (out.height, out.width) == (20, 20)
        assert out.boxes[0] == BBox(0, 0, 20, 20)
        assert np.array_equal(out.raster, raster[10:30, 10:30])

    def test_two_boxes_translate(self):
        raster = np.zeros((100, 100, 3), dtype=np.uint8)
        boxes = (BBox(10, 10, 20, 20), BBox(50, 50, 10, 10))
        s = Sample(raster=raster, boxes=boxes, masks=tuple(rect_mask(100, 100, b) for b in boxes), labels=(1, 2))
        out = box_crop(s)
        assert (out.height, out.width) == (50, 50)
        assert out.boxes == (BBox(0, 0, 20, 20), BBox(40, 40, 10, 10))

    def test_spanning_box_is_identity(self):
        raster = np.random.default_rng(1).integers(0, 255, (30, 40, 3), dtype=np.uint8)
        box = BBox(0, 0, 40, 30)
        s = Sample(raster=raster, boxes=(box,), masks=(rect_mask(30, 40, box),), labels=(1,))
        out = box_crop(s)
        assert np.array_equal(out.raster, s.raster)
        assert out.boxes == s.boxes

    def test_idempotent(self):
        s = demo_sample()
        once = box_crop(s)
        twice = box_crop(once)
        assert np.array_equal(twice.raster, once.raster)
        assert twice.boxes == once.boxes
        assert all(np.array_equal(a.array, b.array) for a, b in zip(twice.masks, once.masks))

    def test_empty_boxes_rejected(self):
        s = Sample(raster=np.zeros((5, 5, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            box_crop(s)

    def test_fractional_union_box_stays_idempotent(self):
        raster = np.zeros((50, 50, 3), dtype=np.uint8)
        box = BBox(10.3, 9.7, 19.4, 21.2)
        grid = np.zeros((50, 50), dtype=bool)
        grid[9:31, 10:30] = True
        s = Sample(raster=raster, boxes=(box,), masks=(BitMask(grid),), labels=(1,))
        once = box_crop(s)
        twice = box_crop(once)
        assert validate_sample(once) == []
        assert (twice.height, twice.width) == (once.height, once.width)
        assert twice.boxes == once.boxes


class TestApplyPipeline:
    def test_all_probabilities_zero_is_identity(self):
        s = demo_sample()
        cfg = AugmentConfig(
            flip_probability=0, photometric_probability=0, crop_probability=0, jitter_probability=0
        )
        out = apply_pipeline(s, cfg, np.random.default_rng(0))
        assert np.array_equal(out.raster, s.raster)
        assert out.boxes == s.boxes

    def test_fixed_seed_determinism(self):
        s = demo_sample()
        cfg = AugmentConfig(seed=5)
        a = apply_pipeline(s, cfg, np.random.default_rng(5))
        b = apply_pipeline(s, cfg, np.random.default_rng(5))
        assert np.array_equal(a.raster, b.raster)
        assert a.boxes == b.boxes
        assert all(np.array_equal(x.array, y.array) for x, y in zip(a.masks, b.masks))

    def test_probability_one_equals_manual_composition(self):
        s = demo_sample()
        cfg = AugmentConfig(
            flip_probability=1.0,
            photometric_probability=1.0,
            crop_probability=1.0,
            jitter_probability=1.0,
        )
        seed = 99
        out = apply_pipeline(s, cfg, np.random.default_rng(seed))

        # Replays the documented draw protocol: coins first, then one child
        # stream per transform.
        rng = np.random.default_rng(seed)
        rng.random(4)
        streams = rng.spawn(4)
        manual = horizontal_flip(s)
        manual = photometric_distortion(manual, streams[1], cfg.photometric)
        manual = box_crop(manual)
        scale = float(streams[3].uniform(*cfg.jitter_scale_range))
        manual = large_scale_jitter(manual, scale, cfg)

        assert np.array_equal(out.raster, manual.raster)
        assert out.boxes == manual.boxes
        assert all(np.array_equal(a.array, b.array) for a, b in zip(out.masks, manual.masks))
        assert out.labels == manual.labels

    def test_invariants_hold_after_pipeline(self):
        cfg = AugmentConfig()
        for seed in range(12):
            out = apply_pipeline(demo_sample(seed), cfg, np.random.default_rng(seed))
            assert validate_sample(out) == []

    def test_labels_track_their_boxes(self):
        # Jitter at scale 2 drops the second object; label 8 must go with it.
        raster = np.zeros((100, 100, 3), dtype=np.uint8)
        inside = BBox(5, 5, 20, 20)
        outside = BBox(80, 80, 15, 15)
        s = Sample(
            raster=raster,
            boxes=(inside, outside),
            masks=(rect_mask(100, 100, inside), rect_mask(100, 100, outside)),
            labels=(7, 8),
        )
        cfg = AugmentConfig(jitter_scale_range=(2.0, 2.0000001))
        out = large_scale_jitter(s, 2.0, cfg)
        assert out.labels == (7,)
        assert out.boxes[0].x == pytest.approx(10)
