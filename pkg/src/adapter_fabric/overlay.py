"""Backend agent network: discovery, heartbeat liveness, tenant-scoped views,
and authenticated encryption of data-plane payloads.

State machine per agent: JOINING -> HEALTHY on first heartbeat; a sweep
demotes HEALTHY to SUSPECT after more than 2x the heartbeat interval of
silence and SUSPECT to UNAVAILABLE after more than 3x; any fresh heartbeat
restores HEALTHY. Transitions never skip a state within one sweep.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from dataclasses import dataclass, replace
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import FabricError

STATE_JOINING = "JOINING"
STATE_HEALTHY = "HEALTHY"
STATE_SUSPECT = "SUSPECT"
STATE_UNAVAILABLE = "UNAVAILABLE"

DEFAULT_HEARTBEAT_SECS = 5.0
HEARTBEAT_ENV_VAR = "ADAPTER_FABRIC_HEARTBEAT_SECS"

_NONCE_BYTES = 12


def heartbeat_interval_from_env(default: float = DEFAULT_HEARTBEAT_SECS) -> float:
    raw = os.environ.get(HEARTBEAT_ENV_VAR)
    if not raw:
        return default
    try:
        value = float(raw)
    except ValueError:
        return default
    return value if value > 0 else default


@dataclass(frozen=True)
class AgentRecord:
    agent_id: str
    tenant_id: str
    base_model_id: str
    max_concurrency: int
    active_requests: int
    state: str
    last_heartbeat_at: int  # epoch ms
    last_seq: int
    endpoint: str = ""  # dispatch URL, supplied at registration
    shared: bool = False  # visible to every tenant's view


@dataclass(frozen=True)
class Heartbeat:
    agent_id: str
    seq: int
    active_requests: int
    sent_at: int


@dataclass(frozen=True)
class StateChange:
    agent_id: str
    old_state: str
    new_state: str


class MembershipView:
    """Immutable snapshot of the agents one tenant may route to."""

    def __init__(self, agents: tuple[AgentRecord, ...]):
        self._agents = agents

    def agents(self) -> tuple[AgentRecord, ...]:
        return self._agents

    def __iter__(self):
        return iter(self._agents)

    def __len__(self) -> int:
        return len(self._agents)


class Overlay:
    """Single-broker membership store; per-agent updates serialize on one lock."""

    def __init__(self, heartbeat_interval_s: Optional[float] = None):
        self._lock = threading.RLock()
        self._agents: dict[str, AgentRecord] = {}
        self.heartbeat_interval_s = (
            heartbeat_interval_s
            if heartbeat_interval_s is not None
            else heartbeat_interval_from_env()
        )

    def register_agent(
        self,
        agent_id: str,
        tenant_id: str,
        base_model_id: str,
        max_concurrency: int,
        now: int,
        endpoint: str = "",
        shared: bool = False,
    ) -> AgentRecord:
        with self._lock:
            existing = self._agents.get(agent_id)
            if existing is not None and existing.state != STATE_UNAVAILABLE:
                raise FabricError("DUPLICATE_AGENT", f"agent {agent_id!r} is live")
            if max_concurrency < 1:
                raise FabricError("INVALID_REQUEST", "max_concurrency must be >= 1")
            record = AgentRecord(
                agent_id=agent_id,
                tenant_id=tenant_id,
                base_model_id=base_model_id,
                max_concurrency=max_concurrency,
                active_requests=0,
                state=STATE_JOINING,
                last_heartbeat_at=now,
                last_seq=0,
                endpoint=endpoint,
                shared=shared,
            )
            self._agents[agent_id] = record
            return record

    def get_agent(self, agent_id: str) -> AgentRecord:
        agent = self._agents.get(agent_id)
        if agent is None:
            raise FabricError("UNKNOWN_AGENT", f"no agent {agent_id!r}")
        return agent

    def list_agents(self) -> list[AgentRecord]:
        with self._lock:
            return sorted(self._agents.values(), key=lambda a: a.agent_id)

    def process_heartbeat(self, hb: Heartbeat, now: int) -> AgentRecord:
        """Apply a heartbeat; stale seq values are discarded silently."""
        with self._lock:
            record = self.get_agent(hb.agent_id)
            if hb.seq <= record.last_seq:
                return record
            updated = replace(
                record,
                last_seq=hb.seq,
                last_heartbeat_at=now,
                active_requests=hb.active_requests,
                state=STATE_HEALTHY,
            )
            self._agents[hb.agent_id] = updated
            return updated

    def sweep(self, now: int, interval_s: Optional[float] = None) -> list[StateChange]:
        """Demote silent agents stepwise; JOINING and UNAVAILABLE are never swept."""
        interval = interval_s if interval_s is not None else self.heartbeat_interval_s
        if interval <= 0:
            raise FabricError("INVALID_REQUEST", "interval must be > 0")
        suspect_ms = 2 * interval * 1000.0
        unavailable_ms = 3 * interval * 1000.0
        changes: list[StateChange] = []
        with self._lock:
            for agent_id in sorted(self._agents):
                record = self._agents[agent_id]
                silence = now - record.last_heartbeat_at
                if record.state == STATE_HEALTHY and silence > suspect_ms:
                    record = replace(record, state=STATE_SUSPECT)
                    self._agents[agent_id] = record
                    changes.append(StateChange(agent_id, STATE_HEALTHY, STATE_SUSPECT))
                if record.state == STATE_SUSPECT and silence > unavailable_ms:
                    self._agents[agent_id] = replace(record, state=STATE_UNAVAILABLE)
                    changes.append(StateChange(agent_id, STATE_SUSPECT, STATE_UNAVAILABLE))
        return changes

    def view_for_tenant(self, tenant_id: str) -> MembershipView:
        """Agents owned by the tenant plus shared agents; an immutable snapshot."""
        with self._lock:
            return MembershipView(
                tuple(
                    a
                    for a in self.list_agents()
                    if a.shared or a.tenant_id == tenant_id
                )
            )

    def view_for_tenants(self, tenant_ids: frozenset[str]) -> MembershipView:
        """Merged view across several tenants (user keys span their projects)."""
        with self._lock:
            return MembershipView(
                tuple(
                    a
                    for a in self.list_agents()
                    if a.shared or a.tenant_id in tenant_ids
                )
            )

    # -- dispatch accounting -------------------------------------------------

    def begin_dispatch(self, agent_id: str) -> None:
        with self._lock:
            record = self.get_agent(agent_id)
            self._agents[agent_id] = replace(record, active_requests=record.active_requests + 1)

    def end_dispatch(self, agent_id: str) -> None:
        with self._lock:
            record = self.get_agent(agent_id)
            self._agents[agent_id] = replace(
                record, active_requests=max(0, record.active_requests - 1)
            )


# -- sealed data plane ------------------------------------------------------


@dataclass(frozen=True)
class SealedEnvelope:
    tenant_id: str
    nonce: bytes
    associated_data: bytes
    ciphertext: bytes  # includes the AEAD tag

    def to_json(self) -> str:
        return json.dumps(
            {
                "tenant_id": self.tenant_id,
                "nonce": base64.b64encode(self.nonce).decode("ascii"),
                "associated_data": base64.b64encode(self.associated_data).decode("ascii"),
                "ciphertext": base64.b64encode(self.ciphertext).decode("ascii"),
            }
        )

    @staticmethod
    def from_json(raw: str | bytes) -> "SealedEnvelope":
        try:
            doc = json.loads(raw)
            return SealedEnvelope(
                tenant_id=doc["tenant_id"],
                nonce=base64.b64decode(doc["nonce"]),
                associated_data=base64.b64decode(doc["associated_data"]),
                ciphertext=base64.b64decode(doc["ciphertext"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise FabricError("DECRYPT_FAILED", f"malformed envelope: {exc}") from exc


def seal(tenant_key: bytes, plaintext: bytes, associated_data: bytes, tenant_id: str) -> SealedEnvelope:
    """AES-256-GCM encrypt with a fresh random nonce; AD is bound, not hidden."""
    if len(tenant_key) != 32:
        raise FabricError("INVALID_REQUEST", "tenant key must be 32 bytes")
    nonce = os.urandom(_NONCE_BYTES)
    ciphertext = AESGCM(tenant_key).encrypt(nonce, plaintext, associated_data)
    return SealedEnvelope(
        tenant_id=tenant_id,
        nonce=nonce,
        associated_data=associated_data,
        ciphertext=ciphertext,
    )


def open_envelope(tenant_key: bytes, envelope: SealedEnvelope) -> bytes:
    """Inverse of seal; any modified bit in any field fails."""
    try:
        return AESGCM(tenant_key).decrypt(
            envelope.nonce, envelope.ciphertext, envelope.associated_data
        )
    except (InvalidTag, ValueError) as exc:
        raise FabricError("DECRYPT_FAILED", "envelope failed authentication") from exc


class KeyRing:
    """Per-tenant 256-bit data-plane keys, provisioned out of band."""

    def __init__(self):
        self._lock = threading.Lock()
        self._keys: dict[str, bytes] = {}

    def provision(self, tenant_id: str, key: Optional[bytes] = None) -> bytes:
        with self._lock:
            if key is None:
                key = os.urandom(32)
            if len(key) != 32:
                raise FabricError("INVALID_REQUEST", "tenant key must be 32 bytes")
            self._keys[tenant_id] = key
            return key

    def get(self, tenant_id: str) -> Optional[bytes]:
        with self._lock:
            return self._keys.get(tenant_id)

    def export(self) -> dict:
        with self._lock:
            return {
                "tenant_keys": [
                    {"tenant_id": t, "key_b64": base64.b64encode(k).decode("ascii")}
                    for t, k in sorted(self._keys.items())
                ]
            }

    def load(self, doc: dict) -> None:
        with self._lock:
            for entry in doc.get("tenant_keys", []):
                self._keys[entry["tenant_id"]] = base64.b64decode(entry["key_b64"])
