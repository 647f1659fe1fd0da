"""Append-only audit ledger, token accounting, usage summaries, rate limiting.

Audit writes are a security control: the ledger is gap-free and immutable,
and every gateway request must produce exactly one record. Token counting
is a deterministic tokenizer-free heuristic (UTF-8 bytes / 4, rounded up).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import FabricError

STATUS_OK = "OK"
AUDIT_STATUSES = (
    "OK",
    "UNAUTHENTICATED",
    "FORBIDDEN",
    "INVALID_REQUEST",
    "RATE_LIMITED",
    "NO_BACKEND",
    "BACKEND_FAILURE",
)


def count_tokens(text: str) -> int:
    """ceil(utf8_byte_length / 4); deliberately approximate but deterministic."""
    return (len(text.encode("utf-8")) + 3) // 4


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    timestamp: int
    key_id: str
    project_id: Optional[str]
    model_id: str
    adapters: tuple[tuple[str, float], ...]
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    status: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "timestamp": self.timestamp,
                "key_id": self.key_id,
                "project_id": self.project_id,
                "model_id": self.model_id,
                "adapters": [{"adapter_id": a, "weight": w} for a, w in self.adapters],
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "latency_ms": self.latency_ms,
                "status": self.status,
            },
            ensure_ascii=False,
        )

    @staticmethod
    def from_json(line: str) -> "AuditRecord":
        doc = json.loads(line)
        return AuditRecord(
            seq=doc["seq"],
            timestamp=doc["timestamp"],
            key_id=doc["key_id"],
            project_id=doc.get("project_id"),
            model_id=doc["model_id"],
            adapters=tuple((a["adapter_id"], a["weight"]) for a in doc["adapters"]),
            prompt_tokens=doc["prompt_tokens"],
            completion_tokens=doc["completion_tokens"],
            latency_ms=doc["latency_ms"],
            status=doc["status"],
        )


@dataclass(frozen=True)
class UsageSummary:
    request_count: int
    prompt_tokens: int
    completion_tokens: int


class AuditLedger:
    """Totally ordered, gap-free append log; records are immutable once written.

    ``sink`` (optional) receives each record's JSON line at append time,
    inside the append lock, so a crash between assigning seq and persisting
    cannot reorder the file. A sink raising aborts the append.
    """

    def __init__(self, sink: Optional[Callable[[str], None]] = None):
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        self._sink = sink

    def append(
        self,
        timestamp: int,
        key_id: str,
        project_id: Optional[str],
        model_id: str,
        adapters: Iterable[tuple[str, float]],
        prompt_tokens: int,
        completion_tokens: int,
        latency_ms: int,
        status: str,
    ) -> AuditRecord:
        if status not in AUDIT_STATUSES:
            raise FabricError("INVALID_REQUEST", f"unknown audit status {status!r}")
        if status != STATUS_OK:
            # Failed requests consumed no model tokens.
            prompt_tokens = 0
            completion_tokens = 0
        with self._lock:
            record = AuditRecord(
                seq=len(self._records) + 1,
                timestamp=timestamp,
                key_id=key_id,
                project_id=project_id,
                model_id=model_id,
                adapters=tuple(adapters),
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                latency_ms=latency_ms,
                status=status,
            )
            if self._sink is not None:
                self._sink(record.to_json())
            self._records.append(record)
            return record

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def summarize(self, key_id: str, window: tuple[int, int]) -> UsageSummary:
        """Aggregate over the key's records with timestamp in [start, end)."""
        start, end = window
        count = prompt = completion = 0
        for r in self.records():
            if r.key_id == key_id and start <= r.timestamp < end:
                count += 1
                prompt += r.prompt_tokens
                completion += r.completion_tokens
        return UsageSummary(count, prompt, completion)

    def load(self, lines: Iterable[str]) -> None:
        with self._lock:
            if self._records:
                raise FabricError("INVALID_REQUEST", "ledger already has records")
            loaded = []
            for lineno, line in enumerate(map(str.strip, lines), start=1):
                if not line:
                    continue
                try:
                    loaded.append(AuditRecord.from_json(line))
                except (ValueError, KeyError, TypeError) as exc:
                    raise FabricError(
                        "CORRUPT_LEDGER", f"ledger line {lineno} is not a valid record"
                    ) from exc
            for i, r in enumerate(loaded, start=1):
                if r.seq != i:
                    raise FabricError("CORRUPT_LEDGER", f"ledger gap at seq {i}")
            self._records.extend(loaded)


@dataclass
class RateBucket:
    key_id: str
    tokens: float
    capacity: int
    refill_per_minute: int
    last_refill_at: int  # epoch ms


class RateLimiter:
    """Per-key token buckets: one token per request, refilled per minute."""

    def __init__(self):
        self._lock = threading.Lock()
        self._buckets: dict[str, RateBucket] = {}

    def register_key(self, key_id: str, capacity: int, refill_per_minute: int, now: int) -> None:
        with self._lock:
            if key_id not in self._buckets:
                self._buckets[key_id] = RateBucket(
                    key_id=key_id,
                    tokens=float(capacity),
                    capacity=capacity,
                    refill_per_minute=refill_per_minute,
                    last_refill_at=now,
                )

    def check_rate(self, key_id: str, now: int) -> bool:
        """True means ALLOW (one token consumed); False means RATE_LIMITED."""
        with self._lock:
            bucket = self._buckets.get(key_id)
            if bucket is None:
                raise FabricError("UNKNOWN_KEY", f"no rate bucket for key {key_id!r}")
            elapsed_minutes = max(0, now - bucket.last_refill_at) / 60000.0
            bucket.tokens = min(
                float(bucket.capacity),
                bucket.tokens + elapsed_minutes * bucket.refill_per_minute,
            )
            bucket.last_refill_at = max(now, bucket.last_refill_at)
            if bucket.tokens >= 1.0:
                bucket.tokens -= 1.0
                return True
            return False
