from __future__ import annotations

import numpy as np
import pytest

from conftest import make_dataset, random_eval_instance
from detcurate.datamodel import BBox, Category, Dataset, Detection, ImageRecord
from detcurate.geometry import BitMask, rle_encode
from detcurate.metrics import (
    AggregatedMatches,
    EvalConfig,
    EvalReport,
    aggregate_matches,
    ar_top_k,
    class_weights_from_annotations,
    evaluate,
    format_report_table,
    interpolated_ap,
    match_detections,
    precision_recall,
    weighted_map,
    weighted_map_at_iou,
    weighted_mar_top_k,
)
from reference import brute_force_evaluate


def det(image_id, category_id, xywh, score) -> Detection:
    return Detection(image_id=image_id, category_id=category_id, bbox=BBox(*xywh), score=score)


def single_class_matches(gt: Dataset, dets: list[Detection], cfg: EvalConfig) -> AggregatedMatches:
    out = aggregate_matches(gt, dets, cfg)
    assert len(out) == 1
    return next(iter(out.values()))


class TestEvalConfig:
    def test_defaults(self):
        cfg = EvalConfig()
        assert len(cfg.iou_thresholds) == 10
        assert cfg.iou_thresholds[0] == 0.50 and cfg.iou_thresholds[-1] == 0.95
        assert len(cfg.recall_grid) == 101
        assert cfg.score_floor == 0.05
        assert cfg.top_k_values == (1, 100)

    def test_rejects_unsorted_thresholds(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=(0.5, 0.5))

    def test_rejects_bad_floor(self):
        with pytest.raises(ValueError):
            EvalConfig(score_floor=1.0)


class TestMatchDetections:
    CFG = EvalConfig(iou_thresholds=(0.5, 0.75, 0.9))

    def test_single_true_positive_at_all_low_thresholds(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        # IoU 0.9 against the single ground truth: 20x20 overlap shifted to give ~0.9.
        d = det(1, 1, (10, 10, 20, 20), 0.8)
        res = match_detections(gt.annotations, [d], self.CFG)
        assert list(res.det_matched_gt[:, 0]) == [1, 1, 1]

    def test_higher_score_wins_single_gt(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        dets = [
            det(1, 1, (12, 12, 20, 20), 0.6),
            det(1, 1, (10, 10, 20, 20), 0.9),
        ]
        res = match_detections(gt.annotations, dets, EvalConfig(iou_thresholds=(0.5,)))
        # Detections are reordered by score: index 0 is the 0.9 det.
        assert res.det_scores == (0.9, 0.6)
        assert res.det_matched_gt[0, 0] == 1  # TP
        assert res.det_matched_gt[0, 1] == -1  # FP

    def test_no_gt_all_false_positive(self):
        res = match_detections([], [det(1, 1, (0, 0, 5, 5), 0.7)], self.CFG)
        assert (res.det_matched_gt == -1).all()

    def test_one_gt_matched_per_threshold(self, rng):
        gt = make_dataset(
            [(1, 100, 100)],
            [(1, 1, 1, (10, 10, 30, 30)), (2, 1, 1, (50, 50, 30, 30))],
            [(1, "c")],
        )
        dets = [det(1, 1, (float(rng.uniform(0, 60)), float(rng.uniform(0, 60)), 30, 30), float(s))
                for s in rng.uniform(0.1, 1, size=6)]
        res = match_detections(gt.annotations, dets, self.CFG)
        for t in range(3):
            matched = [g for g in res.det_matched_gt[t] if g != -1]
            assert len(matched) == len(set(matched))


class TestPrecisionRecall:
    def test_perfect(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        dets = [det(1, 1, (10, 10, 20, 20), 0.9)]
        m = single_class_matches(gt, dets, EvalConfig(iou_thresholds=(0.5,)))
        assert precision_recall(m, 0.5, 0.05) == (1.0, 1.0)

    def test_empty_prediction_set_convention(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        dets = [det(1, 1, (10, 10, 20, 20), 0.9)]
        m = single_class_matches(gt, dets, EvalConfig(iou_thresholds=(0.5,)))
        assert precision_recall(m, 0.5, 1.0) == (1.0, 0.0)

    def test_two_tp_one_fp_of_four_gt(self):
        gt = make_dataset(
            [(1, 100, 100)],
            [(i, 1, 1, (20.0 * i, 20.0 * i, 10, 10)) for i in range(1, 5)],
            [(1, "c")],
        )
        dets = [
            det(1, 1, (20, 20, 10, 10), 0.9),
            det(1, 1, (40, 40, 10, 10), 0.8),
            det(1, 1, (0, 0, 5, 5), 0.7),
        ]
        m = single_class_matches(gt, dets, EvalConfig(iou_thresholds=(0.5,)))
        p, r = precision_recall(m, 0.5, 0.05)
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(1 / 2)


class TestInterpolatedAp:
    def test_perfect_single_detection(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        m = single_class_matches(
            gt, [det(1, 1, (10, 10, 20, 20), 0.9)], EvalConfig(iou_thresholds=(0.5,))
        )
        assert interpolated_ap(m, 0.5) == 1.0

    def test_no_detections(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        m = single_class_matches(gt, [], EvalConfig(iou_thresholds=(0.5,)))
        assert interpolated_ap(m, 0.5) == 0.0

    def test_tp_fp_tp_curve_matches_threshold_sweep(self):
        # Frozen from the brute-force oracle: 51 grid points at precision 1,
        # 50 at 2/3 -> AP = 253/303.
        gt = make_dataset(
            [(1, 100, 100)],
            [(1, 1, 1, (10, 10, 20, 20)), (2, 1, 1, (60, 60, 20, 20))],
            [(1, "c")],
        )
        dets = [
            det(1, 1, (10, 10, 20, 20), 0.9),
            det(1, 1, (0, 0, 5, 5), 0.8),
            det(1, 1, (60, 60, 20, 20), 0.7),
        ]
        m = single_class_matches(gt, dets, EvalConfig(iou_thresholds=(0.5,)))
        assert interpolated_ap(m, 0.5) == pytest.approx(253 / 303, abs=1e-12)


class TestWeightedAggregation:
    def test_single_class_equals_ap(self):
        assert weighted_map_at_iou({1: 0.7}, {1: 1.0}) == pytest.approx(0.7)

    def test_counts_three_to_one(self):
        # Weights 0.75/0.25 with APs 1/0.
        assert weighted_map_at_iou({1: 1.0, 2: 0.0}, {1: 0.75, 2: 0.25}) == pytest.approx(0.75)

    def test_uniform_counts_mean(self):
        assert weighted_map_at_iou({1: 0.4, 2: 0.8}, {1: 0.5, 2: 0.5}) == pytest.approx(0.6)

    def test_key_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            weighted_map_at_iou({1: 0.5}, {2: 1.0})

    def test_weighted_map_over_thresholds(self):
        per_iou = {0.5: {1: 0.4}, 0.75: {1: 0.2}}
        assert weighted_map(per_iou, {1: 1.0}, (0.5, 0.75)) == pytest.approx(0.3)

    def test_identical_ap_at_all_thresholds(self):
        thr = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
        per_iou = {phi: {1: 0.37} for phi in thr}
        assert weighted_map(per_iou, {1: 1.0}, thr) == pytest.approx(0.37)

    def test_weighted_mar(self):
        assert weighted_mar_top_k({1: 1.0, 2: 0.0}, {1: 0.75, 2: 0.25}) == pytest.approx(0.75)

    def test_class_weights_from_annotations(self):
        gt = make_dataset(
            [(1, 100, 100)],
            [(1, 1, 1, (0, 0, 5, 5)), (2, 1, 1, (10, 10, 5, 5)), (3, 1, 1, (20, 20, 5, 5)),
             (4, 1, 2, (30, 30, 5, 5))],
            [(1, "a"), (2, "b"), (3, "unused")],
        )
        weights = class_weights_from_annotations(gt.annotations)
        assert weights == {1: 0.75, 2: 0.25}
        assert sum(weights.values()) == pytest.approx(1.0)


class TestArTopK:
    def test_perfect_top1(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        m = single_class_matches(
            gt, [det(1, 1, (10, 10, 20, 20), 0.9)], EvalConfig(iou_thresholds=(0.5, 0.75))
        )
        assert ar_top_k(m, 1) == 1.0

    def test_no_detections_contributes_zero(self):
        gt = make_dataset([(1, 100, 100)], [(1, 1, 1, (10, 10, 20, 20))], [(1, "c")])
        m = single_class_matches(gt, [], EvalConfig(iou_thresholds=(0.5,)))
        assert ar_top_k(m, 1) == 0.0

    def test_per_image_averaging(self):
        gt = make_dataset(
            [(1, 100, 100), (2, 100, 100)],
            [(1, 1, 1, (10, 10, 20, 20)), (2, 2, 1, (10, 10, 20, 20))],
            [(1, "c")],
        )
        dets = [det(1, 1, (10, 10, 20, 20), 0.9)]  # image 2 gets nothing
        m = single_class_matches(gt, dets, EvalConfig(iou_thresholds=(0.5,)))
        assert ar_top_k(m, 1) == pytest.approx(0.5)

    def test_top1_admits_score_ties_beyond_k(self):
        gt = make_dataset(
            [(1, 100, 100)],
            [(1, 1, 1, (10, 10, 20, 20)), (2, 1, 1, (60, 60, 20, 20))],
            [(1, "c")],
        )
        dets = [
            det(1, 1, (10, 10, 20, 20), 0.5),
            det(1, 1, (60, 60, 20, 20), 0.5),
        ]
        m = single_class_matches(gt, dets, EvalConfig(iou_thresholds=(0.5,)))
        # tau = 0.5 admits both tied detections even at k=1.
        assert ar_top_k(m, 1) == 1.0


def identical_detections(gt: Dataset, score: float = 1.0, with_masks: bool = False) -> list[Detection]:
    images = gt.image_by_id()
    out = []
    for a in gt.annotations:
        mask = None
        if with_masks:
            im = images[a.image_id]
            grid = np.zeros((im.height, im.width), dtype=bool)
            b = a.bbox
            grid[int(b.y) : int(b.y + b.h), int(b.x) : int(b.x + b.w)] = True
            mask = rle_encode(BitMask(grid))
        out.append(
            Detection(image_id=a.image_id, category_id=a.category_id, bbox=a.bbox, score=score, mask=mask)
        )
    return out


def two_class_dataset() -> Dataset:
    return make_dataset(
        [(1, 100, 100), (2, 100, 100)],
        [
            (1, 1, 1, (10, 10, 20, 20)),
            (2, 1, 2, (50, 50, 20, 20)),
            (3, 2, 1, (30, 30, 20, 20)),
            (4, 2, 1, (60, 10, 20, 20)),
        ],
        [(1, "shoe"), (2, "hat")],
    )


class TestEvaluate:
    def test_ceiling(self):
        gt = two_class_dataset()
        report = evaluate(gt, identical_detections(gt))
        assert report.map_w == pytest.approx(1.0, abs=1e-12)
        assert report.map_w_50 == pytest.approx(1.0, abs=1e-12)
        assert report.map_w_75 == pytest.approx(1.0, abs=1e-12)
        assert report.mar_w_top1 == pytest.approx(1.0, abs=1e-12)
        assert report.mar_w_top100 == pytest.approx(1.0, abs=1e-12)

    def test_floor(self):
        gt = two_class_dataset()
        report = evaluate(gt, [])
        assert report.map_w == 0.0
        assert report.map_w_50 == 0.0
        assert report.map_w_75 == 0.0
        assert report.mar_w_top1 == 0.0
        assert report.mar_w_top100 == 0.0

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(7)
        cfg = EvalConfig()
        for _ in range(25):
            gt, dets = random_eval_instance(rng)
            report = evaluate(gt, dets, cfg)
            ref = brute_force_evaluate(
                gt, dets, cfg.iou_thresholds, cfg.recall_grid, cfg.score_floor, cfg.top_k_values
            )
            assert report.map_w == pytest.approx(ref["map_w"], abs=1e-9)
            assert report.map_w_50 == pytest.approx(ref["map_w_50"], abs=1e-9)
            assert report.map_w_75 == pytest.approx(ref["map_w_75"], abs=1e-9)
            assert report.mar_w_top1 == pytest.approx(ref["mar_w_by_k"][1], abs=1e-9)
            assert report.mar_w_top100 == pytest.approx(ref["mar_w_by_k"][100], abs=1e-9)

    def test_score_scaling_invariance(self):
        rng = np.random.default_rng(11)
        gt, dets = random_eval_instance(rng)
        cfg = EvalConfig(score_floor=0.0)
        base = evaluate(gt, dets, cfg)
        scaled = [
            Detection(d.image_id, d.category_id, d.bbox, d.score * 0.5, d.mask) for d in dets
        ]
        report = evaluate(gt, scaled, cfg)
        assert report.map_w == pytest.approx(base.map_w, abs=1e-12)
        assert report.map_w_50 == pytest.approx(base.map_w_50, abs=1e-12)

    def test_sub_floor_detection_changes_nothing(self):
        gt = two_class_dataset()
        dets = identical_detections(gt, score=0.8)
        extra = dets + [det(1, 1, (0, 0, 90, 90), 0.04)]
        base = evaluate(gt, dets)
        with_extra = evaluate(gt, extra)
        assert with_extra == base

    def test_permutation_invariance(self):
        rng = np.random.default_rng(13)
        gt, dets = random_eval_instance(rng)
        # Distinct scores so ranking is unambiguous under reordering.
        dets = [
            Detection(d.image_id, d.category_id, d.bbox, (i + 1) / (len(dets) + 1), d.mask)
            for i, d in enumerate(dets)
        ]
        base = evaluate(gt, dets)
        shuffled_dets = list(dets)
        rng.shuffle(shuffled_dets)
        shuffled_gt = Dataset(
            images=tuple(reversed(gt.images)),
            annotations=tuple(reversed(gt.annotations)),
            categories=gt.categories,
        )
        assert evaluate(shuffled_gt, shuffled_dets) == base

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            gt, dets = random_eval_instance(rng)
            report = evaluate(gt, dets)
            assert report.map_w_75 <= report.map_w_50 + 1e-12
            assert report.mar_w_top100 >= report.mar_w_top1 - 1e-12

    def test_single_class_map_equals_plain_ap(self):
        gt = make_dataset(
            [(1, 100, 100)],
            [(1, 1, 1, (10, 10, 20, 20)), (2, 1, 1, (60, 60, 20, 20))],
            [(1, "c")],
        )
        dets = [
            det(1, 1, (10, 10, 20, 20), 0.9),
            det(1, 1, (0, 0, 5, 5), 0.8),
            det(1, 1, (60, 60, 20, 20), 0.7),
        ]
        report = evaluate(gt, dets)
        matches = aggregate_matches(gt, dets, EvalConfig())
        plain = np.mean([interpolated_ap(matches[1], phi) for phi in EvalConfig().iou_thresholds])
        assert report.map_w == pytest.approx(float(plain), abs=1e-12)

    def test_absent_class_gets_no_entry(self):
        gt = make_dataset(
            [(1, 100, 100)],
            [(1, 1, 1, (10, 10, 20, 20))],
            [(1, "present"), (2, "absent")],
        )
        report = evaluate(gt, identical_detections(gt))
        assert 2 not in report.per_class_ap
        assert 2 not in report.class_weights

    def test_unknown_reference_rejected(self):
        gt = two_class_dataset()
        with pytest.raises(ValueError, match="unknown image_id"):
            evaluate(gt, [det(99, 1, (0, 0, 5, 5), 0.5)])

    def test_weighting_semantics_three_to_one(self):
        # Class 1: 3 annotations, all found perfectly; class 2: 1 annotation, missed.
        gt = make_dataset(
            [(1, 100, 100)],
            [
                (1, 1, 1, (0, 0, 10, 10)),
                (2, 1, 1, (20, 20, 10, 10)),
                (3, 1, 1, (40, 40, 10, 10)),
                (4, 1, 2, (60, 60, 10, 10)),
            ],
            [(1, "common"), (2, "rare")],
        )
        dets = [
            det(1, 1, (0, 0, 10, 10), 1.0),
            det(1, 1, (20, 20, 10, 10), 1.0),
            det(1, 1, (40, 40, 10, 10), 1.0),
        ]
        report = evaluate(gt, dets)
        assert report.map_w == pytest.approx(0.75, abs=1e-12)


class TestMaskEvaluation:
    def test_rect_masks_match_box_evaluation(self):
        rng = np.random.default_rng(23)
        extent = 64
        images = [(1, extent, extent), (2, extent, extent)]
        annotations = []
        ann_id = 1
        for img in (1, 2):
            for _ in range(2):
                x, y = (int(v) for v in rng.integers(0, 30, 2))
                w, h = (int(v) for v in rng.integers(8, 20, 2))
                annotations.append((ann_id, img, 1, (float(x), float(y), float(w), float(h))))
                ann_id += 1
        base = make_dataset(images, annotations, [(1, "c")])
        # Attach exact rectangle masks to the ground truth.
        gt = Dataset(
            images=base.images,
            annotations=[
                type(a)(
                    id=a.id,
                    image_id=a.image_id,
                    category_id=a.category_id,
                    bbox=a.bbox,
                    area=a.bbox.w * a.bbox.h,
                    mask=_rect_mask(a.bbox, extent),
                )
                for a in base.annotations
            ],
            categories=base.categories,
        )
        dets = []
        for a in gt.annotations:
            dx = float(rng.integers(-4, 5))
            shifted = BBox(
                min(max(a.bbox.x + dx, 0), extent - a.bbox.w),
                a.bbox.y,
                a.bbox.w,
                a.bbox.h,
            )
            dets.append(
                Detection(
                    image_id=a.image_id,
                    category_id=1,
                    bbox=shifted,
                    score=float(rng.uniform(0.2, 1.0)),
                    mask=_rect_mask(shifted, extent),
                )
            )
        box_report = evaluate(gt, dets, EvalConfig(kind="box"))
        mask_report = evaluate(gt, dets, EvalConfig(kind="mask"))
        # Integer-aligned rectangles: mask IoU equals box IoU, so reports agree.
        assert mask_report.map_w == pytest.approx(box_report.map_w, abs=1e-12)
        assert mask_report.mar_w_top100 == pytest.approx(box_report.mar_w_top100, abs=1e-12)

    def test_detection_without_mask_is_fp_in_mask_mode(self):
        extent = 32
        base = make_dataset([(1, extent, extent)], [(1, 1, 1, (4, 4, 10, 10))], [(1, "c")])
        gt = Dataset(
            images=base.images,
            annotations=[
                type(a)(
                    id=a.id,
                    image_id=a.image_id,
                    category_id=a.category_id,
                    bbox=a.bbox,
                    area=a.bbox.w * a.bbox.h,
                    mask=_rect_mask(a.bbox, extent),
                )
                for a in base.annotations
            ],
            categories=base.categories,
        )
        dets = [det(1, 1, (4, 4, 10, 10), 0.9)]  # no mask attached
        assert evaluate(gt, dets, EvalConfig(kind="box")).map_w == pytest.approx(1.0)
        assert evaluate(gt, dets, EvalConfig(kind="mask")).map_w == 0.0


def _rect_mask(b: BBox, extent: int):
    grid = np.zeros((extent, extent), dtype=bool)
    grid[int(b.y) : int(b.y + b.h), int(b.x) : int(b.x + b.w)] = True
    return rle_encode(BitMask(grid))


class TestReportRendering:
    def test_table_layout_with_stored_values(self):
        # Golden formatting fixture with stored (not recomputed) metric values.
        box = EvalReport(
            kind="box",
            map_w=0.210,
            map_w_50=0.221,
            map_w_75=0.215,
            mar_w_by_k={1: 0.321, 100: 0.327},
            per_class_ap={},
            class_weights={},
        )
        mask = EvalReport(
            kind="mask",
            map_w=0.212,
            map_w_50=0.220,
            map_w_75=0.215,
            mar_w_by_k={1: 0.321, 100: 0.327},
            per_class_ap={},
            class_weights={},
        )
        table = format_report_table([("baseline-detector", box, mask)])
        lines = table.splitlines()
        assert "mAP_w" in lines[0] and "mAR_w@top100" in lines[0]
        row = lines[-1]
        for value in ("21.0", "21.2", "22.1", "22.0", "21.5", "32.1", "32.7"):
            assert value in row
        # Column order: mAP_w pair first, top100 pair last.
        assert row.index("21.0") < row.index("22.1") < row.index("32.7")

    def test_json_report_scaled_to_percent(self):
        rep = EvalReport(
            kind="box",
            map_w=0.5,
            map_w_50=0.75,
            map_w_75=0.25,
            mar_w_by_k={1: 0.1, 100: 0.2},
            per_class_ap={3: 0.5},
            class_weights={3: 1.0},
        )
        obj = rep.to_json()
        assert obj["mAP_w"] == 50.0
        assert obj["mAR_w@top100"] == pytest.approx(20.0)
        assert obj["per_class_AP"]["3"] == 50.0
        assert obj["class_weights"]["3"] == 1.0
