"""Pluggable annotators for the pipeline's label, box and mask stages.

The shipped implementations are deterministic table-driven mocks for tests
and offline runs, plus HTTP clients for real model services. Clients retry
three times with exponential backoff and a per-call timeout; any terminal
failure surfaces as :class:`OracleError`, which the pipeline converts into
an auto-rejection rather than aborting the run.

HTTP contract (JSON bodies):
  label: POST {"description": str}            -> {"label": str | null}
  boxes: POST {"image": str, "prompt": str}   -> {"boxes": [{"bbox": [x,y,w,h], "score": s}]}
  mask:  POST {"image": str, "bbox": [x,y,w,h]} -> {"mask": {"size": [h,w], "counts": [...]}}
"""

from __future__ import annotations

import base64
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from .datamodel import BBox, MaskRLE
from .geometry import BitMask, rle_encode


class OracleError(RuntimeError):
    """An oracle failed after retries or returned an unusable response."""


@dataclass(frozen=True)
class ScoredBox:
    bbox: BBox
    score: float


class LabelOracle(Protocol):
    def label(self, description: str) -> str | None: ...


class BoxOracle(Protocol):
    def boxes(self, image_path: str, prompt: str) -> list[ScoredBox]: ...


class MaskOracle(Protocol):
    def mask(self, image_path: str, box: BBox) -> MaskRLE: ...


@dataclass
class MockLabelOracle:
    """Looks descriptions up in a fixed table; unknown ones yield no label."""

    table: dict[str, str | None] = field(default_factory=dict)
    calls: int = 0

    def label(self, description: str) -> str | None:
        self.calls += 1
        return self.table.get(description)


@dataclass
class MockBoxOracle:
    """Returns pre-seeded boxes per image path (empty when unseeded)."""

    table: dict[str, list[ScoredBox]] = field(default_factory=dict)
    calls: int = 0

    def boxes(self, image_path: str, prompt: str) -> list[ScoredBox]:
        self.calls += 1
        return list(self.table.get(image_path, []))


@dataclass
class MockMaskOracle:
    """Fills the prompt box as a rectangle at each image's declared extent."""

    extents: dict[str, tuple[int, int]] = field(default_factory=dict)  # path -> (h, w)
    calls: int = 0

    def mask(self, image_path: str, box: BBox) -> MaskRLE:
        self.calls += 1
        if image_path not in self.extents:
            raise OracleError(f"no extent registered for {image_path}")
        h, w = self.extents[image_path]
        x0, y0 = max(0, int(box.x)), max(0, int(box.y))
        x1, y1 = min(w, int(box.x + box.w)), min(h, int(box.y + box.h))
        grid = np.zeros((h, w), dtype=bool)
        grid[y0:y1, x0:x1] = True
        return rle_encode(BitMask(grid))


def _post_with_retry(
    url: str,
    body: dict,
    session: requests.Session | None,
    timeout: float,
    retries: int,
    backoff: float,
) -> dict:
    sess = session or requests
    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            resp = sess.post(url, json=body, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:  # noqa: BLE001 - every failure is retryable here
            last_error = exc
            if attempt + 1 < retries:
                time.sleep(backoff * (2**attempt))
    raise OracleError(f"POST {url} failed after {retries} attempts: {last_error}")


@dataclass
class HttpLabelOracle:
    url: str
    session: requests.Session | None = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    def label(self, description: str) -> str | None:
        data = _post_with_retry(
            self.url, {"description": description}, self.session, self.timeout, self.retries, self.backoff
        )
        label = data.get("label")
        return str(label) if label else None


def _encode_image(image_path: str, inline: bool) -> str:
    if not inline:
        return image_path
    return base64.b64encode(Path(image_path).read_bytes()).decode("ascii")


@dataclass
class HttpBoxOracle:
    url: str
    session: requests.Session | None = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    inline_images: bool = False

    def boxes(self, image_path: str, prompt: str) -> list[ScoredBox]:
        body = {"image": _encode_image(image_path, self.inline_images), "prompt": prompt}
        data = _post_with_retry(self.url, body, self.session, self.timeout, self.retries, self.backoff)
        try:
            return [
                ScoredBox(bbox=BBox.from_list(b["bbox"]), score=float(b["score"]))
                for b in data["boxes"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleError(f"malformed box oracle response: {data!r}") from exc


@dataclass
class HttpMaskOracle:
    url: str
    session: requests.Session | None = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    inline_images: bool = False

    def mask(self, image_path: str, box: BBox) -> MaskRLE:
        body = {"image": _encode_image(image_path, self.inline_images), "bbox": box.as_list()}
        data = _post_with_retry(self.url, body, self.session, self.timeout, self.retries, self.backoff)
        try:
            rle = data["mask"]
            return MaskRLE(
                size=(int(rle["size"][0]), int(rle["size"][1])),
                counts=tuple(int(c) for c in rle["counts"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleError(f"malformed mask oracle response: {data!r}") from exc


@dataclass
class OracleSet:
    label: LabelOracle
    boxes: BoxOracle
    mask: MaskOracle
