"""Model-assisted annotation pipeline with a resumable decision log.

Products are ingested from a manifest, optionally filtered by human
criterion decisions, then each image flows through oracle stages: a label
oracle reads the product description, a box oracle localizes the object, an
anomaly filter drops candidates without a label or with more than one box,
the label is mapped onto the ontology, and a mask oracle segments the
surviving box. Candidates then wait for human review; approved ones export
to a dataset.

Every stage outcome is appended to the decision log together with its
output, so a rerun folds the log and only invokes oracles for stages that
have no record yet.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .datamodel import (
    BBox,
    Category,
    Dataset,
    GroundTruthAnnotation,
    ImageRecord,
    MaskRLE,
    validate,
)
from .decisionlog import DecisionLog, LogRecord
from .ontology import LabelRejection, Ontology, map_label
from .oracles import BoxOracle, LabelOracle, MaskOracle, OracleError, OracleSet, ScoredBox

PENDING = "pending"
AUTO_REJECTED = "auto_rejected"
AWAITING_REVIEW = "awaiting_review"
APPROVED = "approved"
FLAGGED = "flagged"

FLAG_REASONS = ("bad_label", "bad_box", "bad_mask")

STAGE_LABEL = "label"
STAGE_BOXES = "boxes"
STAGE_ANOMALY = "anomaly"
STAGE_CATEGORY = "category"
STAGE_MASK = "mask"
STAGE_REVIEW = "review"
STAGE_FILTER = "filter"


class IngestError(ValueError):
    """Malformed manifest line or duplicate product id."""


class StateTransitionError(RuntimeError):
    """A verdict was applied to a candidate in a terminal state."""


class ExportError(RuntimeError):
    """An approved candidate breaks a dataset invariant."""


@dataclass(frozen=True)
class ProductEntry:
    id: str
    image_paths: tuple[str, ...]
    description: str


@dataclass(frozen=True)
class SkippedEntry:
    line_no: int
    product_id: str
    reason: str


def ingest(manifest: str | Path) -> tuple[list[ProductEntry], list[SkippedEntry]]:
    """Reads a line-delimited product manifest.

    Each line is a JSON object {"id", "images", "description"}. Malformed
    lines and duplicate ids abort with :class:`IngestError`; entries that
    merely violate invariants (no images, empty description) are skipped and
    reported.
    """
    entries: list[ProductEntry] = []
    skipped: list[SkippedEntry] = []
    seen: set[str] = set()
    with open(manifest, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pid = str(obj["id"])
                images = tuple(str(p) for p in obj["images"])
                description = str(obj["description"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestError(f"manifest line {line_no}: malformed record: {exc}") from exc
            if pid in seen:
                raise IngestError(f"manifest line {line_no}: duplicate product id {pid!r}")
            seen.add(pid)
            if not images:
                skipped.append(SkippedEntry(line_no, pid, "no images"))
                continue
            if not description.strip():
                skipped.append(SkippedEntry(line_no, pid, "empty description"))
                continue
            entries.append(ProductEntry(id=pid, image_paths=images, description=description))
    return entries, skipped


@dataclass(frozen=True)
class FilterDecision:
    """Human exclusion criteria for one image; any raised flag excludes it."""

    multiple_objects: bool = False
    human_body_visible: bool = False
    extreme_closeup: bool = False
    decided_at: str = ""
    annotator: str = ""

    @property
    def excluded(self) -> bool:
        return self.multiple_objects or self.human_body_visible or self.extreme_closeup


def apply_filter(entry: ProductEntry, decision: FilterDecision) -> bool:
    """True when the entry is kept (no exclusion criterion raised)."""
    return not decision.excluded


@dataclass(frozen=True)
class AnnotationCandidate:
    """One product image flowing through the annotation stages."""

    id: str
    product_id: str
    image_path: str
    description: str = ""
    label: str | None = None
    boxes: tuple[ScoredBox, ...] = ()
    category: Category | None = None
    mask: MaskRLE | None = None
    status: str = PENDING
    status_reason: str | None = None
    stages_done: frozenset[str] = frozenset()

    def with_stage(self, stage: str, **changes) -> "AnnotationCandidate":
        return replace(self, stages_done=self.stages_done | {stage}, **changes)


def candidates_from_entries(entries: Iterable[ProductEntry]) -> list[AnnotationCandidate]:
    """One candidate per product image, with stable ids ``{product}:{index}``."""
    out = []
    for entry in entries:
        for i, path in enumerate(entry.image_paths):
            out.append(
                AnnotationCandidate(
                    id=f"{entry.id}:{i}",
                    product_id=entry.id,
                    image_path=path,
                    description=entry.description,
                )
            )
    return out


def run_label_stage(candidate: AnnotationCandidate, oracle: LabelOracle) -> str | None:
    """Asks the label oracle; output is lowercased and trimmed, empty -> None."""
    label = oracle.label(candidate.description)
    if label is None:
        return None
    label = label.strip().lower()
    return label or None


def run_box_stage(candidate: AnnotationCandidate, oracle: BoxOracle, prompt: str = "an object") -> list[ScoredBox]:
    """Asks the box oracle with the generic prompt; keeps every returned box."""
    return list(oracle.boxes(candidate.image_path, prompt))


def run_mask_stage(
    candidate: AnnotationCandidate,
    oracle: MaskOracle,
    expected_size: tuple[int, int] | None = None,
) -> MaskRLE:
    """Asks the mask oracle for the single surviving box.

    Raises :class:`OracleError` when the returned mask does not match the
    expected (height, width) extent.
    """
    if len(candidate.boxes) != 1:
        raise ValueError(f"candidate {candidate.id}: mask stage needs exactly one box")
    mask = oracle.mask(candidate.image_path, candidate.boxes[0].bbox)
    if expected_size is not None and mask.size != tuple(expected_size):
        raise OracleError(
            f"candidate {candidate.id}: mask extent {mask.size} != image extent {tuple(expected_size)}"
        )
    if sum(mask.counts) != mask.height * mask.width:
        raise OracleError(f"candidate {candidate.id}: malformed mask counts")
    return mask


def anomaly_filter(
    candidates: Sequence[AnnotationCandidate],
) -> tuple[list[AnnotationCandidate], list[AnnotationCandidate]]:
    """Partitions candidates into (passed, rejected).

    A candidate without a label or with a box count other than one is an
    anomaly. Requires label and box stages to be complete.
    """
    passed: list[AnnotationCandidate] = []
    rejected: list[AnnotationCandidate] = []
    for cand in candidates:
        if cand.label is None or len(cand.boxes) != 1:
            rejected.append(
                cand.with_stage(STAGE_ANOMALY, status=AUTO_REJECTED, status_reason="anomaly")
            )
        else:
            passed.append(cand.with_stage(STAGE_ANOMALY))
    return passed, rejected


def record_review(
    candidate: AnnotationCandidate,
    verdict: str,
    log: DecisionLog,
    reason: str | None = None,
    actor: str = "annotator",
) -> AnnotationCandidate:
    """Applies an approve/flag verdict and appends it to the decision log.

    Repeating the identical verdict is a no-op; any other transition from a
    terminal state raises :class:`StateTransitionError`.
    """
    if verdict not in ("approve", "flag"):
        raise ValueError(f"unknown verdict {verdict!r}")
    if verdict == "flag" and reason not in FLAG_REASONS:
        raise ValueError(f"flag reason must be one of {FLAG_REASONS}, got {reason!r}")

    target = APPROVED if verdict == "approve" else FLAGGED
    if candidate.status == target and (verdict == "approve" or candidate.status_reason == reason):
        return candidate
    if candidate.status != AWAITING_REVIEW:
        raise StateTransitionError(
            f"candidate {candidate.id}: cannot apply {verdict!r} in state {candidate.status!r}"
        )
    log.append(
        LogRecord(
            candidate_id=candidate.id,
            stage=STAGE_REVIEW,
            outcome=verdict,
            payload={"reason": reason} if reason else {},
            actor=actor,
        )
    )
    return candidate.with_stage(
        STAGE_REVIEW, status=target, status_reason=reason if verdict == "flag" else None
    )


def _scored_boxes_to_json(boxes: Sequence[ScoredBox]) -> list[dict]:
    return [{"bbox": b.bbox.as_list(), "score": b.score} for b in boxes]


def _scored_boxes_from_json(objs: Iterable[dict]) -> tuple[ScoredBox, ...]:
    return tuple(ScoredBox(bbox=BBox.from_list(o["bbox"]), score=float(o["score"])) for o in objs)


@dataclass
class PipelineState:
    """Fold of the decision log over a set of candidates."""

    candidates: dict[str, AnnotationCandidate] = field(default_factory=dict)
    filter_decisions: dict[str, FilterDecision] = field(default_factory=dict)

    @classmethod
    def from_log(
        cls, records: Iterable[LogRecord], candidates: Iterable[AnnotationCandidate]
    ) -> "PipelineState":
        state = cls(candidates={c.id: c for c in candidates})
        for rec in records:
            state.apply(rec)
        return state

    def apply(self, rec: LogRecord) -> None:
        if rec.stage == STAGE_FILTER:
            self.filter_decisions[rec.candidate_id] = FilterDecision(
                multiple_objects=bool(rec.payload.get("multiple_objects")),
                human_body_visible=bool(rec.payload.get("human_body_visible")),
                extreme_closeup=bool(rec.payload.get("extreme_closeup")),
                decided_at=rec.timestamp,
                annotator=rec.actor,
            )
            return
        cand = self.candidates.get(rec.candidate_id)
        if cand is None:
            return  # record for a candidate outside this run's scope
        if rec.stage == STAGE_LABEL:
            if rec.outcome == "ok":
                cand = cand.with_stage(STAGE_LABEL, label=rec.payload.get("label"))
            else:
                cand = cand.with_stage(STAGE_LABEL, status=AUTO_REJECTED, status_reason="oracle_error")
        elif rec.stage == STAGE_BOXES:
            if rec.outcome == "ok":
                cand = cand.with_stage(
                    STAGE_BOXES, boxes=_scored_boxes_from_json(rec.payload.get("boxes", []))
                )
            else:
                cand = cand.with_stage(STAGE_BOXES, status=AUTO_REJECTED, status_reason="oracle_error")
        elif rec.stage == STAGE_ANOMALY:
            if rec.outcome == "rejected":
                cand = cand.with_stage(STAGE_ANOMALY, status=AUTO_REJECTED, status_reason="anomaly")
            else:
                cand = cand.with_stage(STAGE_ANOMALY)
        elif rec.stage == STAGE_CATEGORY:
            if rec.outcome == "mapped":
                cand = cand.with_stage(
                    STAGE_CATEGORY,
                    category=Category(
                        id=int(rec.payload["category_id"]),
                        name=str(rec.payload["name"]),
                        supercategory=str(rec.payload.get("supercategory", "")),
                    ),
                )
            else:
                cand = cand.with_stage(
                    STAGE_CATEGORY,
                    status=AUTO_REJECTED,
                    status_reason=str(rec.payload.get("reason", "unknown_label")),
                )
        elif rec.stage == STAGE_MASK:
            if rec.outcome == "ok":
                cand = cand.with_stage(
                    STAGE_MASK,
                    mask=MaskRLE.from_json(rec.payload["mask"]),
                    status=AWAITING_REVIEW,
                )
            else:
                cand = cand.with_stage(STAGE_MASK, status=AUTO_REJECTED, status_reason="bad_mask")
        elif rec.stage == STAGE_REVIEW:
            target = APPROVED if rec.outcome == "approve" else FLAGGED
            cand = cand.with_stage(
                STAGE_REVIEW, status=target, status_reason=rec.payload.get("reason")
            )
        self.candidates[cand.id] = cand

    def by_status(self) -> dict[str, list[AnnotationCandidate]]:
        out: dict[str, list[AnnotationCandidate]] = {}
        for cand in self.candidates.values():
            out.setdefault(cand.status, []).append(cand)
        return out

    def counts(self) -> dict[str, int]:
        return {status: len(cands) for status, cands in sorted(self.by_status().items())}


def record_filter_decision(
    log: DecisionLog, image_key: str, decision: FilterDecision, actor: str = "annotator"
) -> None:
    outcome = "exclude" if decision.excluded else "keep"
    log.append(
        LogRecord(
            candidate_id=image_key,
            stage=STAGE_FILTER,
            outcome=outcome,
            payload={
                "multiple_objects": decision.multiple_objects,
                "human_body_visible": decision.human_body_visible,
                "extreme_closeup": decision.extreme_closeup,
            },
            actor=actor or decision.annotator,
        )
    )


def run_auto_stages(
    candidates: Sequence[AnnotationCandidate],
    oracles: OracleSet,
    log: DecisionLog,
    ontology: Ontology | None = None,
    prompt: str = "an object",
    image_size_reader: Callable[[str], tuple[int, int]] | None = None,
    max_workers: int = 4,
) -> PipelineState:
    """Runs label, box, anomaly, ontology and mask stages over all candidates.

    Folds the existing log first and only invokes oracles for stages without
    a record, so interrupted runs resume without repeated work. Oracle
    failures auto-reject the candidate and the run continues.
    """
    ontology = ontology or Ontology.default()
    state = PipelineState.from_log(log.replay(), candidates)

    def stage_missing(cand: AnnotationCandidate, stage: str) -> bool:
        return stage not in cand.stages_done and cand.status == PENDING

    def do_label(cand: AnnotationCandidate) -> LogRecord:
        try:
            label = run_label_stage(cand, oracles.label)
            return LogRecord(cand.id, STAGE_LABEL, "ok", {"label": label})
        except OracleError as exc:
            return LogRecord(cand.id, STAGE_LABEL, "error", {"message": str(exc)})

    def do_boxes(cand: AnnotationCandidate) -> LogRecord:
        try:
            boxes = run_box_stage(cand, oracles.boxes, prompt)
            return LogRecord(cand.id, STAGE_BOXES, "ok", {"boxes": _scored_boxes_to_json(boxes)})
        except OracleError as exc:
            return LogRecord(cand.id, STAGE_BOXES, "error", {"message": str(exc)})

    def do_mask(cand: AnnotationCandidate) -> LogRecord:
        try:
            expected = image_size_reader(cand.image_path) if image_size_reader else None
            mask = run_mask_stage(cand, oracles.mask, expected)
            return LogRecord(cand.id, STAGE_MASK, "ok", {"mask": mask.to_json()})
        except OracleError as exc:
            return LogRecord(cand.id, STAGE_MASK, "error", {"message": str(exc)})

    def run_parallel(work: list[AnnotationCandidate], fn) -> None:
        if not work:
            return
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            for rec in pool.map(fn, work):
                log.append(rec)
                state.apply(rec)

    run_parallel([c for c in state.candidates.values() if stage_missing(c, STAGE_LABEL)], do_label)
    run_parallel([c for c in state.candidates.values() if stage_missing(c, STAGE_BOXES)], do_boxes)

    # Anomaly filter: label or box-count violations are rejected in bulk.
    ready = [
        c
        for c in state.candidates.values()
        if stage_missing(c, STAGE_ANOMALY)
        and STAGE_LABEL in c.stages_done
        and STAGE_BOXES in c.stages_done
    ]
    passed, rejected = anomaly_filter(ready)
    for cand in rejected:
        rec = LogRecord(
            cand.id,
            STAGE_ANOMALY,
            "rejected",
            {"label": cand.label, "box_count": len(cand.boxes)},
        )
        log.append(rec)
        state.apply(rec)
    for cand in passed:
        rec = LogRecord(cand.id, STAGE_ANOMALY, "passed", {})
        log.append(rec)
        state.apply(rec)

    # Ontology mapping.
    for cand in [c for c in state.candidates.values() if stage_missing(c, STAGE_CATEGORY) and STAGE_ANOMALY in c.stages_done]:
        outcome = map_label(cand.label or "", ontology)
        if isinstance(outcome, LabelRejection):
            rec = LogRecord(
                cand.id,
                STAGE_CATEGORY,
                "rejected",
                {"reason": outcome.reason, "detail": outcome.detail},
            )
        else:
            rec = LogRecord(
                cand.id,
                STAGE_CATEGORY,
                "mapped",
                {
                    "category_id": outcome.id,
                    "name": outcome.name,
                    "supercategory": outcome.supercategory,
                },
            )
        log.append(rec)
        state.apply(rec)

    run_parallel(
        [c for c in state.candidates.values() if stage_missing(c, STAGE_MASK) and STAGE_CATEGORY in c.stages_done],
        do_mask,
    )
    return state


def export_dataset(
    candidates: Sequence[AnnotationCandidate], ontology: Ontology | None = None
) -> Dataset:
    """Builds a dataset from approved candidates, one annotation per image.

    Every input must be approved; any invariant breach aborts the export
    naming the offending candidate. Only categories actually used appear.
    """
    for cand in candidates:
        if cand.status != APPROVED:
            raise ExportError(f"candidate {cand.id}: not approved (status {cand.status!r})")
        if cand.category is None or len(cand.boxes) != 1 or cand.mask is None:
            raise ExportError(f"candidate {cand.id}: incomplete annotation slots")

    ordered = sorted(candidates, key=lambda c: c.id)
    images: list[ImageRecord] = []
    annotations: list[GroundTruthAnnotation] = []
    used: dict[int, Category] = {}
    for idx, cand in enumerate(ordered, start=1):
        assert cand.mask is not None and cand.category is not None
        h, w = cand.mask.size
        images.append(
            ImageRecord(id=idx, width=w, height=h, file_name=Path(cand.image_path).name)
        )
        annotations.append(
            GroundTruthAnnotation(
                id=idx,
                image_id=idx,
                category_id=cand.category.id,
                bbox=cand.boxes[0].bbox,
                area=float(cand.mask.foreground_area()),
                mask=cand.mask,
            )
        )
        used[cand.category.id] = cand.category

    dataset = Dataset(
        images=images,
        annotations=annotations,
        categories=[used[c] for c in sorted(used)],
    )
    problems = validate(dataset)
    if problems:
        raise ExportError(f"export failed validation: {problems}")
    return dataset
