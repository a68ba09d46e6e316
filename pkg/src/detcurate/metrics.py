"""Frequency-weighted detection/segmentation evaluation.

The metric suite scores detections against ground truth with:

* greedy per-image, per-class matching at a grid of IoU thresholds,
* interpolated average precision sampled on an equally spaced recall grid
  (101 points by default),
* class-frequency weighting: each class contributes proportionally to its
  share of ground-truth annotations, so singleton classes cannot dominate
  small, unbalanced test sets,
* top-k average recall, evaluated per image at the confidence of the k-th
  highest-scoring detection.

All reductions are deterministic: images are processed in id order and tied
detection scores keep their input order under a stable sort.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import Category, Dataset, Detection, GroundTruthAnnotation, ImageRecord
from .geometry import box_iou, mask_iou

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
DEFAULT_RECALL_GRID = tuple(i / 100.0 for i in range(101))
DEFAULT_SCORE_FLOOR = 0.05
DEFAULT_TOP_K = (1, 100)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation parameters: IoU grid, recall grid, confidence floor, top-k."""

    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_grid: tuple[float, ...] = DEFAULT_RECALL_GRID
    score_floor: float = DEFAULT_SCORE_FLOOR
    top_k_values: tuple[int, ...] = DEFAULT_TOP_K
    kind: str = "box"

    def __post_init__(self):
        if self.kind not in ("box", "mask"):
            raise ValueError(f"kind must be 'box' or 'mask', got {self.kind!r}")
        for grid, name in ((self.iou_thresholds, "iou_thresholds"), (self.recall_grid, "recall_grid")):
            if not grid:
                raise ValueError(f"{name} must be non-empty")
            if any(not 0.0 <= v <= 1.0 for v in grid):
                raise ValueError(f"{name} values must lie in [0, 1]")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if not 0.0 <= self.score_floor < 1.0:
            raise ValueError(f"score_floor must lie in [0, 1), got {self.score_floor}")
        if any(k < 1 for k in self.top_k_values):
            raise ValueError("top_k_values must all be >= 1")


@dataclass(frozen=True)
class MatchResult:
    """Greedy match outcome for one (image, class) pair.

    Detections are sorted by descending score. ``det_matched_gt[t, i]`` holds
    the matched ground-truth annotation id for detection ``i`` at IoU
    threshold index ``t``, or -1 when unmatched. ``gt_matched[t, j]`` flags
    whether ground truth ``j`` was matched at threshold index ``t``.
    """

    iou_thresholds: tuple[float, ...]
    det_scores: tuple[float, ...]
    det_matched_gt: np.ndarray
    gt_ids: tuple[int, ...]
    gt_matched: np.ndarray

    @property
    def n_gt(self) -> int:
        return len(self.gt_ids)

    def threshold_index(self, phi: float) -> int:
        try:
            return self.iou_thresholds.index(phi)
        except ValueError:
            raise ValueError(f"IoU threshold {phi} not in {self.iou_thresholds}") from None


@dataclass(frozen=True)
class AggregatedMatches:
    """All per-image match results for a single class, dataset-wide."""

    category_id: int
    iou_thresholds: tuple[float, ...]
    image_results: tuple[MatchResult, ...]

    @property
    def n_gt(self) -> int:
        return sum(r.n_gt for r in self.image_results)

    def threshold_index(self, phi: float) -> int:
        try:
            return self.iou_thresholds.index(phi)
        except ValueError:
            raise ValueError(f"IoU threshold {phi} not in {self.iou_thresholds}") from None


def _pair_iou(det: Detection, gt: GroundTruthAnnotation, kind: str) -> float:
    if kind == "box":
        return box_iou(det.bbox, gt.bbox)
    # Mask evaluation: a detection or annotation without a mask cannot match.
    if det.mask is None or gt.mask is None:
        return 0.0
    return mask_iou(det.mask, gt.mask)


def match_detections(
    gts: Sequence[GroundTruthAnnotation],
    dets: Sequence[Detection],
    cfg: EvalConfig,
    category: Category | None = None,
    image: ImageRecord | None = None,
) -> MatchResult:
    """Greedily matches detections of one image/class at every IoU threshold.

    Detections are processed in descending score order (ties keep input
    order); each is matched to the unmatched ground truth with the highest
    IoU among those at or above the threshold. Thresholds are independent.
    Detections below the score floor must already be removed.
    """
    if image is not None:
        for obj in (*gts, *dets):
            if obj.image_id != image.id:
                raise ValueError(f"object image_id {obj.image_id} != image {image.id}")
    if category is not None:
        for obj in (*gts, *dets):
            if obj.category_id != category.id:
                raise ValueError(f"object category_id {obj.category_id} != category {category.id}")

    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    dets_sorted = [dets[i] for i in order]
    gts_sorted = sorted(gts, key=lambda a: a.id)

    n_thr = len(cfg.iou_thresholds)
    n_det = len(dets_sorted)
    n_gt = len(gts_sorted)
    ious = np.zeros((n_det, n_gt))
    for i, det in enumerate(dets_sorted):
        for j, gt in enumerate(gts_sorted):
            ious[i, j] = _pair_iou(det, gt, cfg.kind)

    det_matched = np.full((n_thr, n_det), -1, dtype=np.int64)
    gt_matched = np.zeros((n_thr, n_gt), dtype=bool)
    for t, phi in enumerate(cfg.iou_thresholds):
        taken = np.zeros(n_gt, dtype=bool)
        for i in range(n_det):
            best_j = -1
            best_iou = phi
            for j in range(n_gt):
                if taken[j]:
                    continue
                if ious[i, j] > best_iou or (best_j == -1 and ious[i, j] >= phi):
                    best_iou = ious[i, j]
                    best_j = j
            if best_j >= 0:
                taken[best_j] = True
                det_matched[t, i] = gts_sorted[best_j].id
                gt_matched[t, best_j] = True

    return MatchResult(
        iou_thresholds=cfg.iou_thresholds,
        det_scores=tuple(d.score for d in dets_sorted),
        det_matched_gt=det_matched,
        gt_ids=tuple(a.id for a in gts_sorted),
        gt_matched=gt_matched,
    )


def _class_rows(matches: AggregatedMatches, thr_index: int) -> tuple[np.ndarray, np.ndarray]:
    """All (score, is-match) detection rows of a class, sorted by descending score."""
    scores: list[float] = []
    flags: list[bool] = []
    for res in matches.image_results:
        scores.extend(res.det_scores)
        flags.extend(res.det_matched_gt[thr_index] != -1)
    score_arr = np.asarray(scores, dtype=np.float64)
    flag_arr = np.asarray(flags, dtype=bool)
    order = np.argsort(-score_arr, kind="stable")
    return score_arr[order], flag_arr[order]


def precision_recall(matches: AggregatedMatches, phi: float, tau: float) -> tuple[float, float]:
    """Precision and recall of a class at IoU threshold phi and confidence tau.

    Only detections with score >= tau count. Precision is 1.0 on an empty
    prediction set; recall is 0.0 when the class has no ground truth.
    """
    t = matches.threshold_index(phi)
    scores, flags = _class_rows(matches, t)
    admitted = scores >= tau
    tp = int(np.count_nonzero(flags & admitted))
    fp = int(np.count_nonzero(~flags & admitted))
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / matches.n_gt if matches.n_gt > 0 else 0.0
    return precision, recall


def _interpolated_ap_from_rows(
    scores: np.ndarray, flags: np.ndarray, n_gt: int, recall_grid: Sequence[float]
) -> float:
    """AP = mean over the recall grid of max precision at recall >= r.

    Operating points are the distinct detection scores (tie groups collapse
    to their boundary), which makes the value identical to sweeping every
    distinct score as a confidence threshold.
    """
    if n_gt == 0:
        return 0.0
    n = len(scores)
    recalls: list[float] = []
    precisions: list[float] = []
    tp = 0
    for i in range(n):
        tp += bool(flags[i])
        if i + 1 == n or scores[i + 1] != scores[i]:
            recalls.append(tp / n_gt)
            precisions.append(tp / (i + 1))
    if not recalls:
        return 0.0
    rec = np.asarray(recalls)
    # Max precision over all operating points at or beyond each recall level.
    suffix_max = np.maximum.accumulate(np.asarray(precisions)[::-1])[::-1]
    idx = np.searchsorted(rec, np.asarray(recall_grid), side="left")
    grid_prec = np.where(idx < len(rec), suffix_max[np.minimum(idx, len(rec) - 1)], 0.0)
    return float(grid_prec.mean())


def interpolated_ap(
    matches: AggregatedMatches, phi: float, recall_grid: Sequence[float] = DEFAULT_RECALL_GRID
) -> float:
    """Interpolated average precision of one class at IoU threshold phi."""
    t = matches.threshold_index(phi)
    scores, flags = _class_rows(matches, t)
    return _interpolated_ap_from_rows(scores, flags, matches.n_gt, recall_grid)


def _weighted_mean(per_class: Mapping[int, float], class_weights: Mapping[int, float]) -> float:
    if set(per_class) != set(class_weights):
        missing = set(per_class) ^ set(class_weights)
        raise ValueError(f"class/weight key mismatch: {sorted(missing)}")
    return float(sum(class_weights[c] * per_class[c] for c in per_class))


def weighted_map_at_iou(
    per_class_ap: Mapping[int, float], class_weights: Mapping[int, float]
) -> float:
    """Frequency-weighted mAP at one IoU threshold: sum of w_c * AP_c.

    Weights are relative class frequencies over classes present in the
    ground truth and must sum to 1, so a single class yields its own AP.
    """
    return _weighted_mean(per_class_ap, class_weights)


def weighted_map(
    per_class_ap_by_iou: Mapping[float, Mapping[int, float]],
    class_weights: Mapping[int, float],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
) -> float:
    """Weighted mAP averaged over the IoU threshold grid."""
    values = [weighted_map_at_iou(per_class_ap_by_iou[phi], class_weights) for phi in iou_thresholds]
    return float(np.mean(values))


def ar_top_k(matches: AggregatedMatches, k: int) -> float:
    """Average recall admitting each image's top-k detections of the class.

    For every image holding at least one ground truth of the class and every
    IoU threshold, recall is evaluated at the confidence of the k-th highest
    detection score in that image (1.0 when the image has no detections, so
    nothing is admitted and recall is 0 unless a detection scores exactly
    1.0). The result averages over those images and all thresholds.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    images = [r for r in matches.image_results if r.n_gt > 0]
    if not images:
        return 0.0
    n_thr = len(matches.iou_thresholds)
    total = 0.0
    for res in images:
        scores = np.asarray(res.det_scores)
        tau = float(scores[min(k, len(scores)) - 1]) if len(scores) else 1.0
        admitted = scores >= tau
        for t in range(n_thr):
            matched = np.count_nonzero((res.det_matched_gt[t] != -1) & admitted)
            total += matched / res.n_gt
    return total / (len(images) * n_thr)


def weighted_mar_top_k(
    per_class_ar: Mapping[int, float], class_weights: Mapping[int, float]
) -> float:
    """Frequency-weighted mean average recall: sum of w_c * AR_c."""
    return _weighted_mean(per_class_ar, class_weights)


def class_weights_from_annotations(annotations: Iterable[GroundTruthAnnotation]) -> dict[int, float]:
    """Relative frequency of each class among ground-truth annotations."""
    counts: dict[int, int] = {}
    for a in annotations:
        counts[a.category_id] = counts.get(a.category_id, 0) + 1
    total = sum(counts.values())
    return {c: n / total for c, n in counts.items()} if total else {}


@dataclass(frozen=True)
class EvalReport:
    """All headline metrics for one evaluation kind, stored in [0, 1].

    Rendered values (tables, report files) are scaled by 100.
    """

    kind: str
    map_w: float
    map_w_50: float | None
    map_w_75: float | None
    mar_w_by_k: dict[int, float]
    per_class_ap: dict[int, float]
    class_weights: dict[int, float]
    category_names: dict[int, str] = field(default_factory=dict)

    @property
    def mar_w_top1(self) -> float | None:
        return self.mar_w_by_k.get(1)

    @property
    def mar_w_top100(self) -> float | None:
        return self.mar_w_by_k.get(100)

    def to_json(self) -> dict:
        scale = lambda v: None if v is None else round(v * 100, 10)  # noqa: E731
        obj = {
            "kind": self.kind,
            "mAP_w": scale(self.map_w),
            "mAP_w@0.50": scale(self.map_w_50),
            "mAP_w@0.75": scale(self.map_w_75),
        }
        for k in sorted(self.mar_w_by_k):
            obj[f"mAR_w@top{k}"] = scale(self.mar_w_by_k[k])
        obj["per_class_AP"] = {str(c): scale(v) for c, v in sorted(self.per_class_ap.items())}
        obj["class_weights"] = {str(c): self.class_weights[c] for c in sorted(self.class_weights)}
        if self.category_names:
            obj["category_names"] = {str(c): self.category_names[c] for c in sorted(self.category_names)}
        return obj


def aggregate_matches(gt: Dataset, dets: Sequence[Detection], cfg: EvalConfig) -> dict[int, AggregatedMatches]:
    """Floor-filters detections and matches every (image, class) pair.

    Returns one :class:`AggregatedMatches` per class present in the ground
    truth; detections of classes without any ground truth are dropped (those
    classes get no weight and no AP entry).
    """
    images = gt.image_by_id()
    categories = gt.category_by_id()
    for det in dets:
        if det.image_id not in images:
            raise ValueError(f"detection references unknown image_id {det.image_id}")
        if det.category_id not in categories:
            raise ValueError(f"detection references unknown category_id {det.category_id}")

    kept = [d for d in dets if d.score >= cfg.score_floor]

    gt_by_pair: dict[tuple[int, int], list[GroundTruthAnnotation]] = {}
    for a in gt.annotations:
        gt_by_pair.setdefault((a.image_id, a.category_id), []).append(a)
    det_by_pair: dict[tuple[int, int], list[Detection]] = {}
    for d in kept:
        det_by_pair.setdefault((d.image_id, d.category_id), []).append(d)

    classes_present = sorted({a.category_id for a in gt.annotations})
    image_ids = sorted(images)

    out: dict[int, AggregatedMatches] = {}
    for c in classes_present:
        results = []
        for img_id in image_ids:
            pair = (img_id, c)
            g = gt_by_pair.get(pair, [])
            d = det_by_pair.get(pair, [])
            if not g and not d:
                continue
            results.append(match_detections(g, d, cfg, categories[c], images[img_id]))
        out[c] = AggregatedMatches(
            category_id=c, iou_thresholds=cfg.iou_thresholds, image_results=tuple(results)
        )
    return out


def evaluate(gt: Dataset, dets: Sequence[Detection], cfg: EvalConfig | None = None) -> EvalReport:
    """Scores detections against a dataset and assembles the full report."""
    cfg = cfg or EvalConfig()
    matches = aggregate_matches(gt, dets, cfg)
    weights = class_weights_from_annotations(gt.annotations)
    names = {c.id: c.name for c in gt.categories}

    if not matches:
        return EvalReport(
            kind=cfg.kind,
            map_w=0.0,
            map_w_50=0.0 if 0.50 in cfg.iou_thresholds else None,
            map_w_75=0.0 if 0.75 in cfg.iou_thresholds else None,
            mar_w_by_k={k: 0.0 for k in cfg.top_k_values},
            per_class_ap={},
            class_weights={},
            category_names=names,
        )

    ap_by_iou: dict[float, dict[int, float]] = {}
    for phi in cfg.iou_thresholds:
        ap_by_iou[phi] = {
            c: interpolated_ap(m, phi, cfg.recall_grid) for c, m in matches.items()
        }
    map_w = weighted_map(ap_by_iou, weights, cfg.iou_thresholds)
    map_w_50 = weighted_map_at_iou(ap_by_iou[0.50], weights) if 0.50 in cfg.iou_thresholds else None
    map_w_75 = weighted_map_at_iou(ap_by_iou[0.75], weights) if 0.75 in cfg.iou_thresholds else None

    mar_w_by_k: dict[int, float] = {}
    for k in cfg.top_k_values:
        per_class_ar = {c: ar_top_k(m, k) for c, m in matches.items()}
        mar_w_by_k[k] = weighted_mar_top_k(per_class_ar, weights)

    per_class_ap = {
        c: float(np.mean([ap_by_iou[phi][c] for phi in cfg.iou_thresholds])) for c in matches
    }
    return EvalReport(
        kind=cfg.kind,
        map_w=map_w,
        map_w_50=map_w_50,
        map_w_75=map_w_75,
        mar_w_by_k=mar_w_by_k,
        per_class_ap=per_class_ap,
        class_weights=weights,
        category_names={c: names.get(c, str(c)) for c in matches},
    )


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value * 100:.1f}"


def format_report_table(rows: Sequence[tuple[str, EvalReport | None, EvalReport | None]]) -> str:
    """Renders rows of (method, box report, mask report) as the summary table.

    Column order: mAP_w, mAP_w@0.50, mAP_w@0.75, mAR_w@top1, mAR_w@top100,
    each with box and mask sub-columns.
    """
    metrics = ["mAP_w", "mAP_w@.50", "mAP_w@.75", "mAR_w@top1", "mAR_w@top100"]
    name_width = max([len("Method")] + [len(r[0]) for r in rows])
    header1 = "Method".ljust(name_width) + " | " + " | ".join(m.center(13) for m in metrics)
    header2 = " " * name_width + " | " + " | ".join(
        f"{'box':>6} {'mask':>6}" for _ in metrics
    )
    sep = "-" * len(header2)
    lines = [header1, header2, sep]
    for name, box_rep, mask_rep in rows:
        cells = []
        for attr in ("map_w", "map_w_50", "map_w_75", "mar_w_top1", "mar_w_top100"):
            b = getattr(box_rep, attr) if box_rep is not None else None
            m = getattr(mask_rep, attr) if mask_rep is not None else None
            cells.append(f"{_fmt(b):>6} {_fmt(m):>6}")
        lines.append(name.ljust(name_width) + " | " + " | ".join(cells))
    return "\n".join(lines)
