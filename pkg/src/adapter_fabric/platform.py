"""Composition root: wires the stores, router, and gateway together and
owns snapshot persistence (control-plane state, documents, audit trail).
"""

from __future__ import annotations

import json
import os
import threading
from typing import Optional

from .embeddings import VectorStore
from .gateway import MAX_TOKENS_CEILING, Gateway
from .overlay import KeyRing, Overlay
from .registry import Registry
from .router import PromptTemplates, Router
from .tenancy import KeyScope, Principal, RateLimit, SCOPE_PROJECT, TenancyStore, now_ms
from .usage_audit import AuditLedger, RateLimiter

STATE_VERSION = 1


class Platform:
    """One fully wired control plane; everything in memory plus optional files."""

    def __init__(
        self,
        heartbeat_interval_s: Optional[float] = None,
        sender=None,
        max_tokens_ceiling: int = MAX_TOKENS_CEILING,
        audit_path: Optional[str] = None,
    ):
        self.tenancy = TenancyStore()
        self.registry = Registry()
        self.tenancy.set_adapter_lookup(self.registry.find_adapter)
        self.overlay = Overlay(heartbeat_interval_s)
        self.keyring = KeyRing()
        self.templates = PromptTemplates()
        self.router = Router(self.overlay, self.keyring, sender=sender)
        self.rate = RateLimiter()
        self._audit_path = audit_path
        self._audit_lock = threading.Lock()
        self.ledger = AuditLedger(sink=self._audit_sink if audit_path else None)
        self.vectors = VectorStore(project_scope=self.principal_projects)
        self.gateway = Gateway(
            tenancy=self.tenancy,
            registry=self.registry,
            overlay=self.overlay,
            router=self.router,
            templates=self.templates,
            ledger=self.ledger,
            rate=self.rate,
            max_tokens_ceiling=max_tokens_ceiling,
        )

    # -- helpers ------------------------------------------------------------

    def principal_projects(self, principal: Principal) -> frozenset[str]:
        if principal.scope.kind == SCOPE_PROJECT:
            return frozenset({principal.scope.subject_id})
        return self.tenancy.user_projects(principal.scope.subject_id)

    def issue_key(self, scope: KeyScope, rate_limit: Optional[RateLimit] = None):
        """Mint a key and open its rate bucket in one step."""
        raw, key = self.tenancy.issue_key(scope, rate_limit)
        self.rate.register_key(
            key.id, key.rate_limit.capacity, key.rate_limit.refill_per_minute, now_ms()
        )
        return raw, key

    def _audit_sink(self, line: str) -> None:
        with self._audit_lock:
            with open(self._audit_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    # -- snapshots -------------------------------------------------------------

    def export_state(self) -> dict:
        return {
            "version": STATE_VERSION,
            "tenancy": self.tenancy.export(),
            "registry": self.registry.export(),
            "keyring": self.keyring.export(),
        }

    def load_state(self, doc: dict) -> None:
        if doc.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported state version {doc.get('version')!r}")
        self.tenancy.load(doc.get("tenancy", {}))
        self.registry.load(doc.get("registry", {}))
        self.keyring.load(doc.get("keyring", {}))
        now = now_ms()
        for key in self.tenancy.list_keys():
            self.rate.register_key(
                key.id, key.rate_limit.capacity, key.rate_limit.refill_per_minute, now
            )

    def save_state_file(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.export_state(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    def load_state_file(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            self.load_state(json.load(fh))

    def load_audit_file(self, path: str) -> None:
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                self.ledger.load(fh)

    def load_documents_file(self, path: str) -> None:
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                self.vectors.ingest_ndjson(fh)

    def save_documents_file(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for line in self.vectors.export_ndjson():
                fh.write(line + "\n")
        os.replace(tmp, path)


def open_platform(state_dir: str, **kwargs) -> Platform:
    """Platform bound to a state directory (snapshot, audit trail, documents)."""
    os.makedirs(state_dir, exist_ok=True)
    audit_path = os.path.join(state_dir, "audit.ndjson")
    platform = Platform(audit_path=audit_path, **kwargs)
    snapshot = os.path.join(state_dir, "state.json")
    if os.path.exists(snapshot):
        platform.load_state_file(snapshot)
    platform.load_audit_file(audit_path)
    platform.load_documents_file(os.path.join(state_dir, "documents.ndjson"))
    return platform


def save_platform(platform: Platform, state_dir: str) -> None:
    platform.save_state_file(os.path.join(state_dir, "state.json"))
    platform.save_documents_file(os.path.join(state_dir, "documents.ndjson"))
