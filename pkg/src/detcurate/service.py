"""HTTP review service backing the browser UI.

Two modes share the queue machinery: ``filter`` serves raw product images
for criterion-based exclusion, ``quality`` serves annotated candidates
(image, label, mask rendering, box) for approve/flag verdicts. Decisions are
durable in the decision log before the response returns; an item already
decided answers 409 unless the same idempotency key is replayed.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any
from urllib.parse import quote

import cv2
import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse

from .datamodel import MaskRLE
from .decisionlog import DecisionLog, LogRecord, utc_now_iso
from .geometry import rle_decode
from .pipeline import (
    AWAITING_REVIEW,
    APPROVED,
    FLAGGED,
    FLAG_REASONS,
    STAGE_FILTER,
    STAGE_REVIEW,
    AnnotationCandidate,
    PipelineState,
    ProductEntry,
    candidates_from_entries,
)

FILTER_FLAGS = ("multiple_objects", "human_body_visible", "extreme_closeup")
PROGRESS_WINDOW_SECONDS = 300.0


@dataclass(frozen=True)
class ReviewItem:
    id: str
    image_path: str
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ReviewQueueState:
    """Progress snapshot: totals plus decision speed over a sliding window."""

    total: int
    completed: int
    started_at: float
    window_timestamps: tuple[float, ...]
    window_seconds: float = PROGRESS_WINDOW_SECONDS

    def speed(self, now: float) -> float:
        recent = [t for t in self.window_timestamps if now - t <= self.window_seconds]
        span = min(self.window_seconds, max(now - self.started_at, 1e-9))
        return len(recent) / span

    def eta_seconds(self, now: float) -> float | None:
        speed = self.speed(now)
        if speed <= 0:
            return None
        return (self.total - self.completed) / speed

    def to_json(self, now: float | None = None) -> dict[str, Any]:
        now = time.time() if now is None else now
        eta = self.eta_seconds(now)
        return {
            "total": self.total,
            "completed": self.completed,
            "remaining": self.total - self.completed,
            "speed_per_second": self.speed(now),
            "eta_seconds": eta,
            "started_at": self.started_at,
        }


def _parse_iso_timestamp(value: str) -> float:
    try:
        return datetime.fromisoformat(value).timestamp()
    except ValueError:
        return 0.0


class ReviewQueue:
    """Ordered review items plus the fold of their decisions."""

    def __init__(self, mode: str, items: list[ReviewItem], log: DecisionLog):
        if mode not in ("filter", "quality"):
            raise ValueError(f"mode must be 'filter' or 'quality', got {mode!r}")
        self.mode = mode
        self.items = list(items)
        self.by_id = {item.id: item for item in self.items}
        self.log = log
        self.decided: dict[str, LogRecord] = {}
        self.started_at = time.time()
        self._lock = threading.Lock()
        stage = STAGE_FILTER if mode == "filter" else STAGE_REVIEW
        for rec in log.replay():
            if rec.stage == stage and rec.candidate_id in self.by_id:
                self.decided[rec.candidate_id] = rec

    @classmethod
    def for_filtering(cls, entries: list[ProductEntry], log: DecisionLog) -> "ReviewQueue":
        items = [
            ReviewItem(id=c.id, image_path=c.image_path)
            for c in candidates_from_entries(entries)
        ]
        return cls("filter", items, log)

    @classmethod
    def for_quality(cls, state: PipelineState, log: DecisionLog) -> "ReviewQueue":
        items = []
        for cand in sorted(state.candidates.values(), key=lambda c: c.id):
            if cand.status not in (AWAITING_REVIEW, APPROVED, FLAGGED):
                continue
            assert cand.mask is not None and len(cand.boxes) == 1
            items.append(
                ReviewItem(
                    id=cand.id,
                    image_path=cand.image_path,
                    payload={
                        "label": cand.label,
                        "category": cand.category.name if cand.category else None,
                        "bbox": cand.boxes[0].bbox.as_list(),
                        "mask": cand.mask.to_json(),
                    },
                )
            )
        return cls("quality", items, log)

    def next_pending(self) -> ReviewItem | None:
        for item in self.items:
            if item.id not in self.decided:
                return item
        return None

    def progress(self) -> ReviewQueueState:
        timestamps = tuple(
            sorted(_parse_iso_timestamp(rec.timestamp) for rec in self.decided.values())
        )
        return ReviewQueueState(
            total=len(self.items),
            completed=len(self.decided),
            started_at=self.started_at,
            window_timestamps=timestamps,
        )

    def _validate_body(self, body: dict[str, Any]) -> tuple[str, dict[str, Any]] | str:
        """Returns (outcome, payload) or an error message."""
        verdict = body.get("verdict")
        if self.mode == "filter":
            if verdict == "keep":
                return "keep", {flag: False for flag in FILTER_FLAGS}
            if verdict == "exclude":
                flags = body.get("flags") or {}
                unknown = set(flags) - set(FILTER_FLAGS)
                if unknown:
                    return f"unknown flags {sorted(unknown)}"
                payload = {flag: bool(flags.get(flag)) for flag in FILTER_FLAGS}
                if not any(payload.values()):
                    return "exclude verdict requires at least one criterion flag"
                return "exclude", payload
            return f"filter verdict must be 'keep' or 'exclude', got {verdict!r}"
        if verdict == "approve":
            return "approve", {}
        if verdict == "flag":
            reason = body.get("reason")
            if reason not in FLAG_REASONS:
                return f"flag reason must be one of {FLAG_REASONS}, got {reason!r}"
            return "flag", {"reason": reason}
        return f"quality verdict must be 'approve' or 'flag', got {verdict!r}"

    def decide(self, item_id: str, body: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        """Validates and durably records one decision; returns (status, body)."""
        if item_id not in self.by_id:
            return 404, {"error": f"unknown item {item_id!r}"}
        validated = self._validate_body(body)
        if isinstance(validated, str):
            return 400, {"error": validated}
        outcome, payload = validated
        key = body.get("idempotency_key")
        actor = str(body.get("annotator", "annotator"))
        if key is not None:
            payload = dict(payload, idempotency_key=str(key))

        with self._lock:
            prior = self.decided.get(item_id)
            if prior is not None:
                prior_key = prior.payload.get("idempotency_key")
                if key is not None and prior_key == str(key):
                    return 200, {"status": "replayed", "outcome": prior.outcome}
                return 409, {
                    "error": f"item {item_id!r} already decided ({prior.outcome})",
                    "outcome": prior.outcome,
                }
            rec = LogRecord(
                candidate_id=item_id,
                stage=STAGE_FILTER if self.mode == "filter" else STAGE_REVIEW,
                outcome=outcome,
                payload=payload,
                timestamp=utc_now_iso(),
                actor=actor,
            )
            self.log.append(rec)  # durable before any response
            self.decided[item_id] = rec
        return 200, {"status": "recorded", "outcome": outcome}


def _item_json(queue: ReviewQueue, item: ReviewItem) -> dict[str, Any]:
    quoted = quote(item.id, safe="")
    obj: dict[str, Any] = {
        "id": item.id,
        "mode": queue.mode,
        "image_url": f"/content/items/{quoted}/image",
    }
    if queue.mode == "quality":
        obj["label"] = item.payload.get("label")
        obj["category"] = item.payload.get("category")
        obj["bbox"] = item.payload.get("bbox")
        obj["mask_url"] = f"/content/masks/{quoted}.png"
    return obj


def render_mask_png(mask: MaskRLE) -> bytes:
    """Grayscale PNG of the mask: white foreground on black."""
    grid = rle_decode(mask).array.astype(np.uint8) * 255
    ok, buf = cv2.imencode(".png", grid)
    if not ok:
        raise RuntimeError("mask PNG encoding failed")
    return buf.tobytes()


def create_app(queue: ReviewQueue, images_root: str | Path | None = None) -> FastAPI:
    """FastAPI application exposing the review API over one queue."""
    app = FastAPI(title="detcurate review service")
    root = Path(images_root).resolve() if images_root else None

    @app.get("/api/queue/next")
    def queue_next() -> Response:
        item = queue.next_pending()
        if item is None:
            return Response(status_code=204)
        return JSONResponse(_item_json(queue, item))

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str) -> Response:
        item = queue.by_id.get(item_id)
        if item is None:
            return JSONResponse({"error": f"unknown item {item_id!r}"}, status_code=404)
        return JSONResponse(_item_json(queue, item))

    @app.post("/api/items/{item_id}/decision")
    async def post_decision(item_id: str, request: Request) -> Response:
        try:
            body = await request.json()
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except ValueError as exc:
            return JSONResponse({"error": f"malformed body: {exc}"}, status_code=400)
        status, payload = queue.decide(item_id, body)
        return JSONResponse(payload, status_code=status)

    @app.get("/api/progress")
    def progress() -> dict[str, Any]:
        return queue.progress().to_json()

    @app.get("/content/items/{item_id}/image")
    def item_image(item_id: str) -> Response:
        item = queue.by_id.get(item_id)
        if item is None:
            return JSONResponse({"error": f"unknown item {item_id!r}"}, status_code=404)
        path = Path(item.image_path)
        if not path.is_file():
            return JSONResponse({"error": f"image for {item_id!r} not found"}, status_code=404)
        return FileResponse(path)

    @app.get("/content/images/{rel_path:path}")
    def static_image(rel_path: str) -> Response:
        if root is None:
            return JSONResponse({"error": "no images root configured"}, status_code=404)
        full = (root / rel_path).resolve()
        if not str(full).startswith(str(root)) or not full.is_file():
            return JSONResponse({"error": "not found"}, status_code=404)
        return FileResponse(full)

    @app.get("/content/masks/{item_id}.png")
    def mask_png(item_id: str) -> Response:
        item = queue.by_id.get(item_id)
        if item is None or "mask" not in item.payload:
            return JSONResponse({"error": f"no mask for item {item_id!r}"}, status_code=404)
        png = render_mask_png(MaskRLE.from_json(item.payload["mask"]))
        return Response(content=png, media_type="image/png")

    return app
