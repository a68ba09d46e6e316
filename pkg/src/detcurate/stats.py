"""Dataset statistics, stratified splitting, and scale/performance analysis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import Dataset
from .geometry import relative_mask_size

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class ClassDistribution:
    """Annotation count and relative frequency per category id."""

    counts: dict[int, int]
    frequencies: dict[int, float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions (summing to 1) and the shuffle seed."""

    fractions: tuple[float, float, float]
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3:
            raise ValueError("fractions must be (train, val, test)")
        if any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be non-negative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def class_distribution(d: Dataset) -> ClassDistribution:
    """Counts ground-truth annotations per category.

    Frequencies are shares of all annotations; a dataset without annotations
    reports all-zero frequencies.
    """
    counts = {c.id: 0 for c in d.categories}
    for a in d.annotations:
        counts[a.category_id] = counts.get(a.category_id, 0) + 1
    total = sum(counts.values())
    frequencies = {c: (n / total if total else 0.0) for c, n in counts.items()}
    return ClassDistribution(counts=counts, frequencies=frequencies)


def mask_size_distribution(d: Dataset) -> dict[int, list[float]]:
    """Relative mask sizes (sqrt of area share) per category, for box plots."""
    images = d.image_by_id()
    out: dict[int, list[float]] = {c.id: [] for c in d.categories}
    for a in d.annotations:
        out.setdefault(a.category_id, []).append(
            relative_mask_size(a.area, images[a.image_id])
        )
    return out


def _largest_remainder(targets: Sequence[float], total: int) -> list[int]:
    """Rounds fractional targets to integers that sum exactly to ``total``."""
    base = [int(np.floor(t)) for t in targets]
    remainder = total - sum(base)
    # Ties broken by split position (train first) for determinism.
    order = sorted(range(len(targets)), key=lambda i: (-(targets[i] - base[i]), i))
    for i in order[:remainder]:
        base[i] += 1
    return base


def _image_strata(d: Dataset) -> dict[int, int | None]:
    """Maps image id to its stratum: the image's dominant category.

    Single-annotation images use that annotation's category; multi-annotation
    images their most frequent one (smallest id on ties); images without
    annotations form a separate stratum.
    """
    per_image: dict[int, dict[int, int]] = {}
    for a in d.annotations:
        per_image.setdefault(a.image_id, {})
        per_image[a.image_id][a.category_id] = per_image[a.image_id].get(a.category_id, 0) + 1
    strata: dict[int, int | None] = {}
    for im in d.images:
        cat_counts = per_image.get(im.id)
        if not cat_counts:
            strata[im.id] = None
        else:
            strata[im.id] = min(cat_counts, key=lambda c: (-cat_counts[c], c))
    return strata


def _reconcile_columns(
    quotas: dict[int | None, list[int]],
    real: dict[int | None, list[float]],
    totals: list[int],
) -> None:
    """Moves single images between splits until column sums hit the targets.

    Per-stratum largest-remainder quotas already sum to each stratum's size;
    this fixes the split totals while keeping every stratum within one image
    of its fractional target.
    """
    strata = sorted(quotas, key=lambda g: (g is None, g))
    while True:
        col = [sum(quotas[g][s] for g in strata) for s in range(3)]
        over = next((s for s in range(3) if col[s] > totals[s]), None)
        if over is None:
            return
        under = next(s for s in range(3) if col[s] < totals[s])
        # Prefer the stratum whose quota deviates most in the right direction.
        best = max(
            (g for g in strata if quotas[g][over] > 0),
            key=lambda g: (quotas[g][over] - real[g][over]) + (real[g][under] - quotas[g][under]),
        )
        quotas[best][over] -= 1
        quotas[best][under] += 1


def stratified_split(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partitions images into train/val/test preserving class frequencies.

    Deterministic for a fixed seed. Quotas come from largest-remainder
    rounding per stratum, then get reconciled so the three split sizes match
    the largest-remainder rounding of the global fractions.
    """
    strata = _image_strata(d)
    groups: dict[int | None, list[int]] = {}
    for img_id in sorted(strata):
        groups.setdefault(strata[img_id], []).append(img_id)

    n = len(d.images)
    totals = _largest_remainder([n * f for f in spec.fractions], n)
    real = {g: [len(ids) * f for f in spec.fractions] for g, ids in groups.items()}
    quotas = {g: _largest_remainder(real[g], len(ids)) for g, ids in groups.items()}
    _reconcile_columns(quotas, real, totals)

    for s, name in enumerate(SPLIT_NAMES):
        if totals[s] == 0 and n > 0:
            warnings.warn(f"split '{name}' is empty for fractions {spec.fractions}")

    rng = np.random.default_rng(spec.seed)
    assignment: dict[int, int] = {}
    for g in sorted(groups, key=lambda g: (g is None, g)):
        ids = np.array(groups[g])
        rng.shuffle(ids)
        q_train, q_val, _ = quotas[g]
        for pos, img_id in enumerate(ids.tolist()):
            assignment[img_id] = 0 if pos < q_train else (1 if pos < q_train + q_val else 2)

    splits = []
    for s in range(3):
        image_ids = {img_id for img_id, sp in assignment.items() if sp == s}
        splits.append(
            Dataset(
                images=[im for im in d.images if im.id in image_ids],
                annotations=[a for a in d.annotations if a.image_id in image_ids],
                categories=d.categories,
            )
        )
    return splits[0], splits[1], splits[2]


@dataclass(frozen=True)
class CorrelationResult:
    """Per-class absolute deltas and their Pearson correlation."""

    pairs: dict[int, tuple[float, float]]  # class -> (|size delta|, |AP delta|)
    pearson_r: float | None  # None when undefined (zero variance)


def scale_performance_correlation(
    sizes_a: Mapping[int, float],
    sizes_b: Mapping[int, float],
    ap_a: Mapping[int, float],
    ap_b: Mapping[int, float],
) -> CorrelationResult:
    """Correlates per-class size differences with per-class AP differences.

    Classes missing a size or an AP on either side are excluded; fewer than
    two common classes is an error. The coefficient is undefined (None) when
    either delta has zero variance.
    """
    common = sorted(set(sizes_a) & set(sizes_b) & set(ap_a) & set(ap_b))
    if len(common) < 2:
        raise ValueError(f"need at least 2 common classes, got {len(common)}")
    pairs = {
        c: (abs(sizes_a[c] - sizes_b[c]), abs(ap_a[c] - ap_b[c])) for c in common
    }
    dsize = np.array([pairs[c][0] for c in common])
    dap = np.array([pairs[c][1] for c in common])
    if np.ptp(dsize) == 0 or np.ptp(dap) == 0:
        return CorrelationResult(pairs=pairs, pearson_r=None)
    r = float(np.corrcoef(dsize, dap)[0, 1])
    return CorrelationResult(pairs=pairs, pearson_r=r)
