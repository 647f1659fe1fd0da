"""Shared test fixtures: random worlds, an independent authorization
oracle, an in-process ASGI client, and scripted transport doubles."""

from __future__ import annotations

import asyncio
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from adapter_fabric.overlay import AgentRecord, Heartbeat
from adapter_fabric.registry import Registry
from adapter_fabric.router import TransportFailure
from adapter_fabric.tenancy import (
    ROLE_ADMIN,
    ROLE_MEMBER,
    SCOPE_PROJECT,
    SCOPE_USER,
    KeyScope,
    RateLimit,
    TenancyStore,
)

# ---------------------------------------------------------------------------
# Random worlds and the brute-force authorization oracle.
# ---------------------------------------------------------------------------


@dataclass
class WorldSpec:
    """Plain-data description of a tenancy world, independent of the store.

    The oracle reads only this; the store is built from it through the
    public API, so the two can be compared.
    """

    users: list = field(default_factory=list)
    # project_id -> {"owner": uid, "members": {uid: role}, "grants": set}
    projects: dict = field(default_factory=dict)
    # adapter_id -> visibility
    adapters: dict = field(default_factory=dict)
    # list of (scope_kind, subject_id)
    key_scopes: list = field(default_factory=list)


def build_world(rng: random.Random) -> WorldSpec:
    spec = WorldSpec()
    spec.users = [f"u{i}" for i in range(rng.randint(2, 5))]
    for p in range(rng.randint(1, 3)):
        pid = f"p{p}"
        owner = rng.choice(spec.users)
        members = {owner: "OWNER"}
        for uid in spec.users:
            if uid != owner and rng.random() < 0.5:
                members[uid] = rng.choice([ROLE_MEMBER, ROLE_ADMIN])
        spec.projects[pid] = {"owner": owner, "members": members, "grants": set()}
    for a in range(rng.randint(3, 8)):
        aid = f"adapters/a{a}"
        spec.adapters[aid] = "PUBLIC" if rng.random() < 0.4 else "PRIVATE"
    for pid, proj in spec.projects.items():
        for aid in spec.adapters:
            if rng.random() < 0.4:
                proj["grants"].add(aid)
    for uid in spec.users:
        if rng.random() < 0.7:
            spec.key_scopes.append((SCOPE_USER, uid))
    for pid in spec.projects:
        if rng.random() < 0.7:
            spec.key_scopes.append((SCOPE_PROJECT, pid))
    if not spec.key_scopes:
        spec.key_scopes.append((SCOPE_USER, spec.users[0]))
    return spec


def oracle_authorize(spec: WorldSpec, scope_kind: str, subject_id: str, adapter_id: str) -> bool:
    """Decision table recomputed from the raw world description."""
    visibility = spec.adapters[adapter_id]
    if visibility == "PUBLIC":
        return True
    if scope_kind == SCOPE_PROJECT:
        proj = spec.projects.get(subject_id)
        return proj is not None and adapter_id in proj["grants"]
    for proj in spec.projects.values():
        if subject_id in proj["members"] and adapter_id in proj["grants"]:
            return True
    return False


BASE_MODEL_ID = "llama-7b"


def materialize_world(spec: WorldSpec, *, rate_capacity: int = 100000):
    """Build a Registry and TenancyStore from a WorldSpec via the public API.

    Returns (registry, store, tokens) where tokens maps each key scope
    tuple to its raw bearer token.
    """
    registry = Registry()
    registry.register_base_model(BASE_MODEL_ID, "Llama", 7_000_000_000, "FP16")
    store = TenancyStore(adapter_lookup=registry.find_adapter)

    for uid in spec.users:
        store.create_user(uid, user_id=uid)
    for pid, proj in spec.projects.items():
        store.create_project(proj["owner"], pid, project_id=pid)
        for uid, role in proj["members"].items():
            if uid != proj["owner"]:
                store.assign_role(pid, proj["owner"], uid, role)
    for aid, visibility in spec.adapters.items():
        registry.register_adapter(
            aid, BASE_MODEL_ID, f"s3://bucket/{aid}", ["q_proj", "v_proj"], 16,
            visibility=visibility,
        )
    for pid, proj in spec.projects.items():
        for aid in sorted(proj["grants"]):
            store.grant_adapter(pid, proj["owner"], aid)

    tokens = {}
    limit = RateLimit(capacity=rate_capacity, refill_per_minute=rate_capacity)
    for kind, subject in spec.key_scopes:
        scope = KeyScope.user(subject) if kind == SCOPE_USER else KeyScope.project(subject)
        raw, _key = store.issue_key(scope, limit)
        tokens[(kind, subject)] = raw
    return registry, store, tokens


# ---------------------------------------------------------------------------
# In-process ASGI client (no sockets, no lifespan).
# ---------------------------------------------------------------------------


@dataclass
class AsgiResponse:
    status: int
    headers: dict
    body: bytes

    def json(self):
        return json.loads(self.body)


class AsgiClient:
    """Drives an ASGI app directly with in-memory scopes."""

    def __init__(self, app):
        self.app = app

    async def request(
        self,
        method: str,
        path: str,
        headers: Optional[dict] = None,
        json_body=None,
        body: bytes = b"",
        query: str = "",
    ) -> AsgiResponse:
        if json_body is not None:
            body = json.dumps(json_body).encode("utf-8")
        raw_headers = [(b"host", b"testserver")]
        for k, v in (headers or {}).items():
            raw_headers.append((k.lower().encode("utf-8"), v.encode("utf-8")))
        scope = {
            "type": "http",
            "asgi": {"version": "3.0", "spec_version": "2.3"},
            "http_version": "1.1",
            "method": method,
            "scheme": "http",
            "path": path,
            "raw_path": path.encode("utf-8"),
            "query_string": query.encode("utf-8"),
            "headers": raw_headers,
            "client": ("testclient", 50000),
            "server": ("testserver", 80),
        }
        consumed = False

        async def receive():
            nonlocal consumed
            if consumed:
                return {"type": "http.disconnect"}
            consumed = True
            return {"type": "http.request", "body": body, "more_body": False}

        messages = []

        async def send(message):
            messages.append(message)

        await self.app(scope, receive, send)
        status, resp_headers, chunks = 500, {}, []
        for m in messages:
            if m["type"] == "http.response.start":
                status = m["status"]
                resp_headers = {k.decode(): v.decode() for k, v in m.get("headers", [])}
            elif m["type"] == "http.response.body":
                chunks.append(m.get("body", b""))
        return AsgiResponse(status, resp_headers, b"".join(chunks))

    def request_sync(self, method, path, **kwargs) -> AsgiResponse:
        return asyncio.run(self.request(method, path, **kwargs))

    def get(self, path, **kwargs) -> AsgiResponse:
        return self.request_sync("GET", path, **kwargs)

    def post(self, path, **kwargs) -> AsgiResponse:
        return self.request_sync("POST", path, **kwargs)

    def put(self, path, **kwargs) -> AsgiResponse:
        return self.request_sync("PUT", path, **kwargs)

    def delete(self, path, **kwargs) -> AsgiResponse:
        return self.request_sync("DELETE", path, **kwargs)


def bearer(token: str) -> dict:
    return {"Authorization": f"Bearer {token}"}


# ---------------------------------------------------------------------------
# Transport doubles for router and gateway tests.
# ---------------------------------------------------------------------------


def ok_backend_response(text: str = "ok", tokens: int = 3) -> bytes:
    return json.dumps(
        {"generated_text": text, "details": {"generated_tokens": tokens}}
    ).encode("utf-8")


class ScriptedSender:
    """Sender double driven by a per-call script.

    Each script entry is either ("ok", payload_bytes), ("status", code,
    payload_bytes), or ("fail", message) to raise TransportFailure.
    Records every call as (agent_id, body, content_type).
    """

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    async def __call__(self, agent, body: bytes, content_type: str, timeout_s: float):
        self.calls.append((agent.agent_id, body, content_type))
        if not self.script:
            return 200, ok_backend_response()
        entry = self.script.pop(0)
        if entry[0] == "ok":
            return 200, entry[1]
        if entry[0] == "status":
            return entry[1], entry[2]
        raise TransportFailure(entry[1])


class EchoSender:
    """Always succeeds; remembers every wire body it was handed."""

    def __init__(self, text: str = "ok", tokens: int = 3):
        self.text = text
        self.tokens = tokens
        self.calls = []

    async def __call__(self, agent, body: bytes, content_type: str, timeout_s: float):
        self.calls.append((agent.agent_id, body, content_type))
        return 200, ok_backend_response(self.text, self.tokens)


def healthy_agent(
    overlay,
    agent_id: str,
    *,
    base_model_id: str = BASE_MODEL_ID,
    tenant_id: str = "public",
    shared: bool = True,
    endpoint: str = "http://backend.invalid",
    max_concurrency: int = 64,
    now: int = 1_000,
) -> AgentRecord:
    """Register an agent and heartbeat it straight to HEALTHY."""
    overlay.register_agent(
        agent_id,
        tenant_id=tenant_id,
        base_model_id=base_model_id,
        max_concurrency=max_concurrency,
        now=now,
        endpoint=endpoint,
        shared=shared,
    )
    overlay.process_heartbeat(
        Heartbeat(agent_id=agent_id, seq=1, active_requests=0, sent_at=now), now=now
    )
    return overlay.get_agent(agent_id)


def make_platform(sender=None):
    """A small serving world: one base model, three adapters, two users.

    adapters/open is PUBLIC, adapters/closed is granted to project p1
    (owned by alice), adapters/other is granted to nobody. Returns the
    platform and {name: (raw_token, ApiKey)} for alice, bob, and p1.
    """
    from adapter_fabric.platform import Platform

    platform = Platform(sender=sender if sender is not None else EchoSender())
    platform.registry.register_base_model("llama-7b", "Llama", 7_000_000_000, "FP16")
    platform.registry.register_adapter(
        "adapters/open", "llama-7b", "s3://b/open", ["q_proj"], 8, visibility="PUBLIC"
    )
    platform.registry.register_adapter(
        "adapters/closed", "llama-7b", "s3://b/closed", ["q_proj"], 8
    )
    platform.registry.register_adapter(
        "adapters/other", "llama-7b", "s3://b/other", ["q_proj"], 8
    )
    platform.tenancy.create_user("Alice", user_id="alice")
    platform.tenancy.create_user("Bob", user_id="bob")
    platform.tenancy.create_project("alice", "proj", project_id="p1")
    platform.tenancy.grant_adapter("p1", "alice", "adapters/closed")
    healthy_agent(platform.overlay, "backend-1")
    tokens = {}
    for name, scope in (
        ("alice", KeyScope.user("alice")),
        ("bob", KeyScope.user("bob")),
        ("p1", KeyScope.project("p1")),
    ):
        raw, key = platform.issue_key(scope, RateLimit(capacity=10_000, refill_per_minute=10_000))
        tokens[name] = (raw, key)
    return platform, tokens
