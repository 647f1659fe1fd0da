"""Deterministic hashed-trigram text embedding and ACL-filtered k-NN search.

The embedder is bit-exactly specified so identical input text yields an
identical vector on any platform: lowercase, hash every overlapping
character trigram with 64-bit FNV-1a, bucket by hash mod 256 with a sign
taken from the hash's top bit, then L2-normalize. Search is an exhaustive
Euclidean scan restricted to documents whose ACL intersects the caller's
project scope.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import FabricError

DIMENSION = 256

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def _fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed_text(text: str) -> list[float]:
    """256-dim unit vector for the text; zero vector if no trigram exists."""
    accum = [0.0] * DIMENSION
    lowered = text.lower()
    for i in range(len(lowered) - 2):
        h = _fnv1a_64(lowered[i : i + 3].encode("utf-8"))
        sign = 1.0 if (h >> 63) == 0 else -1.0
        accum[h % DIMENSION] += sign
    norm = sum(v * v for v in accum) ** 0.5
    if norm == 0.0:
        return accum
    return [v / norm for v in accum]


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    text: str
    vector: tuple[float, ...]
    acl: frozenset[str]


class VectorStore:
    """In-memory document store with permission-filtered nearest-neighbor search.

    ``project_scope`` maps a principal to the set of project ids it may act
    for; it is injected at wiring time so this module stays independent of
    the tenancy store.
    """

    def __init__(self, project_scope: Optional[Callable[[object], frozenset[str]]] = None):
        self._lock = threading.RLock()
        self._docs: dict[str, DocumentRecord] = {}
        self._order: list[str] = []
        self._project_scope = project_scope

    def set_project_scope(self, project_scope: Callable[[object], frozenset[str]]) -> None:
        self._project_scope = project_scope

    def __len__(self) -> int:
        return len(self._docs)

    def index_document(self, doc_id: str, text: str, acl: Iterable[str]) -> DocumentRecord:
        with self._lock:
            if doc_id in self._docs:
                raise FabricError("DUPLICATE_DOC", f"document {doc_id!r} already indexed")
            record = DocumentRecord(
                doc_id=doc_id,
                text=text,
                vector=tuple(embed_text(text)),
                acl=frozenset(acl),
            )
            self._docs[doc_id] = record
            self._order.append(doc_id)
            return record

    def get_document(self, doc_id: str) -> DocumentRecord:
        doc = self._docs.get(doc_id)
        if doc is None:
            raise FabricError("UNKNOWN_DOC", f"no document {doc_id!r}")
        return doc

    def search(self, principal, query_text: str, k: int) -> list[tuple[str, float]]:
        """k nearest permitted documents by Euclidean distance, ascending.

        Ties break toward the lexicographically smaller doc_id; fewer than k
        permitted documents returns all of them.
        """
        if k < 1:
            raise FabricError("INVALID_REQUEST", "k must be >= 1")
        if self._project_scope is None:
            raise FabricError("UNAUTHENTICATED", "no principal scope resolver wired")
        scope = self._project_scope(principal)
        with self._lock:
            docs = list(self._docs.values())
        query = embed_text(query_text)
        # math.dist pins the distance arithmetic: any independent exhaustive
        # scan using it ranks documents identically, ulp for ulp.
        permitted = [
            (math.dist(doc.vector, query), doc.doc_id)
            for doc in docs
            if doc.acl & scope
        ]
        permitted.sort()
        return [(doc_id, dist) for dist, doc_id in permitted[:k]]

    # -- bulk ingestion ------------------------------------------------------

    def ingest_ndjson(self, lines: Iterable[str]) -> int:
        """Load newline-delimited JSON records {doc_id, text, acl}; returns count."""
        count = 0
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            self.index_document(rec["doc_id"], rec["text"], rec.get("acl", []))
            count += 1
        return count

    def export_ndjson(self) -> list[str]:
        with self._lock:
            return [
                json.dumps(
                    {"doc_id": d.doc_id, "text": d.text, "acl": sorted(d.acl)},
                    ensure_ascii=False,
                )
                for d in (self._docs[i] for i in self._order)
            ]
