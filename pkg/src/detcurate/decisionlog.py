"""Append-only, line-delimited decision log.

Every pipeline stage outcome and every human verdict is one JSON line;
current state is always the fold of the log, which makes runs crash-safe and
resumable. Appends flush and fsync before returning, so an acknowledged
record survives a crash. Single writer per file; the lock serializes
concurrent appends from worker threads.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class LogRecord:
    candidate_id: str
    stage: str
    outcome: str
    payload: dict[str, Any] = field(default_factory=dict)
    timestamp: str = field(default_factory=utc_now_iso)
    actor: str = "pipeline"

    def to_json(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "stage": self.stage,
            "outcome": self.outcome,
            "payload": self.payload,
            "timestamp": self.timestamp,
            "actor": self.actor,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "LogRecord":
        return cls(
            candidate_id=str(obj["candidate_id"]),
            stage=str(obj["stage"]),
            outcome=str(obj["outcome"]),
            payload=dict(obj.get("payload", {})),
            timestamp=str(obj.get("timestamp", "")),
            actor=str(obj.get("actor", "")),
        )


class DecisionLog:
    """Durable append-only record store backed by one JSONL file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = None

    def append(self, record: LogRecord) -> None:
        line = json.dumps(record.to_json(), separators=(",", ":")) + "\n"
        with self._lock:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(line)
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def replay(self) -> list[LogRecord]:
        """All records currently on disk, in append order."""
        if not self.path.exists():
            return []
        return list(read_records(self.path))

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "DecisionLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_records(path: str | Path) -> Iterator[LogRecord]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield LogRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed log record: {exc}") from exc
