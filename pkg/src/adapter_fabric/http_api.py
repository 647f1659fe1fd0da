"""HTTP surface: OpenAI-compatible inference endpoints, agent control
endpoints, chat-session storage, and admin endpoints for keys/projects.

Implemented directly against ASGI to keep the per-request overhead low;
run it under uvicorn. All JSON errors use {"error": {"code", "message"}}.
"""

from __future__ import annotations

import asyncio
import json
import mimetypes
import os
import threading
import uuid
from typing import Optional
from urllib.parse import parse_qs

from .errors import FabricError
from .overlay import Heartbeat
from .platform import Platform
from .tenancy import (
    KeyScope,
    Principal,
    RateLimit,
    ROLE_ADMIN,
    ROLE_OWNER,
    SCOPE_PROJECT,
    SCOPE_USER,
    now_ms,
)
from .usage_audit import count_tokens

EMBEDDING_MODEL_NAME = "hashed-trigram-256"

_STATUS_FOR_PREFIX = (("UNKNOWN_", 404), ("DUPLICATE_", 409), ("EMPTY_", 400))


def _http_status_for(err: FabricError) -> int:
    from .gateway import API_ERROR_HTTP_STATUS

    if err.code in API_ERROR_HTTP_STATUS:
        return API_ERROR_HTTP_STATUS[err.code]
    for prefix, status in _STATUS_FOR_PREFIX:
        if err.code.startswith(prefix):
            return status
    return 400


class SessionStore:
    """Chat histories scoped to the API key that created them."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, dict[str, dict]] = {}

    def list(self, key_id: str) -> list[dict]:
        with self._lock:
            sessions = list(self._sessions.get(key_id, {}).values())
        sessions.sort(key=lambda s: s["created_at"])
        return [
            {
                "session_id": s["session_id"],
                "title": s["title"],
                "created_at": s["created_at"],
                "updated_at": s["updated_at"],
                "turn_count": len(s["turns"]),
            }
            for s in sessions
        ]

    def create(self, key_id: str, title: str, params: dict) -> dict:
        session = {
            "session_id": "sess-" + uuid.uuid4().hex[:12],
            "title": title or "untitled",
            "params": params,
            "turns": [],
            "created_at": now_ms(),
            "updated_at": now_ms(),
        }
        with self._lock:
            self._sessions.setdefault(key_id, {})[session["session_id"]] = session
        return session

    def get(self, key_id: str, session_id: str) -> dict:
        with self._lock:
            session = self._sessions.get(key_id, {}).get(session_id)
        if session is None:
            raise FabricError("UNKNOWN_SESSION", f"no session {session_id!r}")
        return session

    def update(self, key_id: str, session_id: str, patch: dict) -> dict:
        with self._lock:
            session = self._sessions.get(key_id, {}).get(session_id)
            if session is None:
                raise FabricError("UNKNOWN_SESSION", f"no session {session_id!r}")
            for field in ("title", "params", "turns"):
                if field in patch:
                    session[field] = patch[field]
            session["updated_at"] = now_ms()
            return session

    def delete(self, key_id: str, session_id: str) -> None:
        with self._lock:
            if self._sessions.get(key_id, {}).pop(session_id, None) is None:
                raise FabricError("UNKNOWN_SESSION", f"no session {session_id!r}")


class Api:
    """ASGI application over one Platform instance."""

    def __init__(
        self,
        platform: Platform,
        ui_dir: Optional[str] = None,
        sweep_interval_s: Optional[float] = None,
    ):
        self.platform = platform
        self.sessions = SessionStore()
        self.ui_dir = os.path.abspath(ui_dir) if ui_dir else None
        self.sweep_interval_s = sweep_interval_s
        self._sweeper: Optional[asyncio.Task] = None

    # -- plumbing ------------------------------------------------------------

    async def __call__(self, scope, receive, send):
        if scope["type"] == "lifespan":
            await self._lifespan(receive, send)
            return
        if scope["type"] != "http":
            return
        try:
            await self._handle(scope, receive, send)
        except FabricError as err:
            await _send_json(
                send,
                _http_status_for(err),
                {"error": {"code": err.code, "message": err.message}},
            )
        except Exception as exc:  # never leak a stack trace to the wire
            await _send_json(
                send, 500, {"error": {"code": "BACKEND_FAILURE", "message": str(exc)}}
            )

    async def _lifespan(self, receive, send):
        while True:
            message = await receive()
            if message["type"] == "lifespan.startup":
                interval = self.sweep_interval_s or self.platform.overlay.heartbeat_interval_s
                self._sweeper = asyncio.get_running_loop().create_task(self._sweep_loop(interval))
                await send({"type": "lifespan.startup.complete"})
            elif message["type"] == "lifespan.shutdown":
                if self._sweeper is not None:
                    self._sweeper.cancel()
                await self.platform.router.aclose()
                await send({"type": "lifespan.shutdown.complete"})
                return

    async def _sweep_loop(self, interval_s: float):
        while True:
            await asyncio.sleep(interval_s)
            self.platform.overlay.sweep(now_ms())

    def _bearer(self, scope) -> str:
        for name, value in scope["headers"]:
            if name == b"authorization":
                header = value.decode("latin-1")
                if header.startswith("Bearer "):
                    return header[len("Bearer ") :]
                break
        return ""

    def _principal(self, scope) -> Principal:
        return self.platform.tenancy.authenticate(self._bearer(scope))

    def _actor_user(self, principal: Principal) -> str:
        """Admin endpoints act on behalf of a user; project keys cannot."""
        if principal.scope.kind != SCOPE_USER:
            raise FabricError("FORBIDDEN", "admin operations need a user-scoped key")
        return principal.scope.subject_id

    # -- routing ------------------------------------------------------------

    async def _handle(self, scope, receive, send):
        method = scope["method"]
        path = scope["path"]

        if method == "GET" and path == "/healthz":
            await _send_json(send, 200, {"status": "ok"})
            return

        if method == "POST" and path == "/v1/chat/completions":
            body = await _read_json(receive, none_on_error=True)
            status, payload = await self.platform.gateway.handle_chat(self._bearer(scope), body)
            await _send_json(send, status, payload)
            return

        if method == "POST" and path == "/v1/embeddings":
            await self._embeddings(scope, receive, send)
            return

        if method == "GET" and path == "/v1/models":
            ids = self.platform.gateway.list_models(self._bearer(scope))
            await _send_json(
                send,
                200,
                {"object": "list", "data": [{"id": i, "object": "model"} for i in ids]},
            )
            return

        if method == "POST" and path == "/agents/register":
            body = await _read_json(receive)
            record = self.platform.overlay.register_agent(
                agent_id=_field(body, "agent_id", str),
                tenant_id=_field(body, "tenant_id", str),
                base_model_id=_field(body, "base_model_id", str),
                max_concurrency=_field(body, "max_concurrency", int),
                now=now_ms(),
                endpoint=body.get("endpoint", ""),
                shared=bool(body.get("shared", False)),
            )
            await _send_json(send, 200, _agent_to_json(record))
            return

        if method == "POST" and path == "/agents/heartbeat":
            body = await _read_json(receive)
            record = self.platform.overlay.process_heartbeat(
                Heartbeat(
                    agent_id=_field(body, "agent_id", str),
                    seq=_field(body, "seq", int),
                    active_requests=_field(body, "active_requests", int),
                    sent_at=_field(body, "sent_at", int),
                ),
                now_ms(),
            )
            await _send_json(send, 200, _agent_to_json(record))
            return

        if method == "GET" and path == "/agents":
            self._principal(scope)
            await _send_json(
                send,
                200,
                {"agents": [_agent_to_json(a) for a in self.platform.overlay.list_agents()]},
            )
            return

        if path.startswith("/v1/sessions"):
            await self._sessions_route(scope, receive, send, method, path)
            return

        if path.startswith("/admin/"):
            await self._admin_route(scope, receive, send, method, path)
            return

        if self.ui_dir and method == "GET":
            if await self._serve_ui(send, path):
                return

        await _send_json(
            send, 404, {"error": {"code": "NOT_FOUND", "message": f"no route {method} {path}"}}
        )

    # -- endpoint bodies ------------------------------------------------------

    async def _embeddings(self, scope, receive, send):
        body = await _read_json(receive)
        if not isinstance(body, dict):
            raise FabricError("INVALID_REQUEST", "body must be a JSON object")
        for field in body:
            if field not in ("model", "input"):
                raise FabricError("INVALID_REQUEST", f"unknown field {field!r}")
        texts = body.get("input")
        if isinstance(texts, str):
            texts = [texts]
        vectors = self.platform.gateway.handle_embeddings(self._bearer(scope), texts)
        tokens = sum(count_tokens(t) for t in texts)
        await _send_json(
            send,
            200,
            {
                "object": "list",
                "model": body.get("model") or EMBEDDING_MODEL_NAME,
                "data": [
                    {"object": "embedding", "index": i, "embedding": v}
                    for i, v in enumerate(vectors)
                ],
                "usage": {"prompt_tokens": tokens, "total_tokens": tokens},
            },
        )

    async def _sessions_route(self, scope, receive, send, method: str, path: str):
        principal = self._principal(scope)
        key_id = principal.key_id
        parts = [p for p in path.split("/") if p]  # ["v1", "sessions", maybe id]

        if len(parts) == 2:
            if method == "GET":
                await _send_json(send, 200, {"sessions": self.sessions.list(key_id)})
                return
            if method == "POST":
                body = await _read_json(receive)
                session = self.sessions.create(
                    key_id,
                    title=str(body.get("title", "")),
                    params=body.get("params", {}),
                )
                await _send_json(send, 200, session)
                return
        elif len(parts) == 3:
            session_id = parts[2]
            if method == "GET":
                await _send_json(send, 200, self.sessions.get(key_id, session_id))
                return
            if method in ("PUT", "PATCH"):
                body = await _read_json(receive)
                await _send_json(send, 200, self.sessions.update(key_id, session_id, body))
                return
            if method == "DELETE":
                self.sessions.delete(key_id, session_id)
                await _send_json(send, 200, {"deleted": session_id})
                return
        raise FabricError("INVALID_REQUEST", f"no route {method} {path}")

    async def _admin_route(self, scope, receive, send, method: str, path: str):
        principal = self._principal(scope)
        tenancy = self.platform.tenancy
        parts = [p for p in path.split("/") if p]  # ["admin", ...]

        if method == "GET" and path == "/admin/users":
            self._actor_user(principal)
            await _send_json(
                send,
                200,
                {
                    "users": [
                        {"id": u.id, "display_name": u.display_name}
                        for u in tenancy.list_users()
                    ]
                },
            )
            return

        if path == "/admin/projects":
            actor = self._actor_user(principal)
            if method == "GET":
                projects = [p for p in tenancy.list_projects() if actor in p.members]
                await _send_json(send, 200, {"projects": [_project_to_json(p) for p in projects]})
                return
            if method == "POST":
                body = await _read_json(receive)
                project = tenancy.create_project(owner=actor, name=_field(body, "name", str))
                await _send_json(send, 200, _project_to_json(project))
                return

        if len(parts) == 4 and parts[1] == "projects" and method == "POST":
            actor = self._actor_user(principal)
            project_id = parts[2]
            body = await _read_json(receive)
            if parts[3] == "roles":
                project = tenancy.assign_role(
                    project_id, actor, _field(body, "target", str), _field(body, "role", str)
                )
                await _send_json(send, 200, _project_to_json(project))
                return
            if parts[3] == "grants":
                project = tenancy.grant_adapter(
                    project_id, actor, _field(body, "adapter_id", str)
                )
                await _send_json(send, 200, _project_to_json(project))
                return

        if path == "/admin/keys":
            actor = self._actor_user(principal)
            if method == "GET":
                keys = [k for k in tenancy.list_keys() if self._key_visible(actor, k)]
                await _send_json(send, 200, {"keys": [_key_to_json(k) for k in keys]})
                return
            if method == "POST":
                body = await _read_json(receive)
                scope_doc = body.get("scope")
                if not isinstance(scope_doc, dict):
                    raise FabricError("INVALID_REQUEST", "scope must be an object")
                key_scope = KeyScope(
                    _field(scope_doc, "kind", str), _field(scope_doc, "subject_id", str)
                )
                self._require_key_control(actor, key_scope)
                rate_limit = None
                if "rate_limit" in body:
                    rl = body["rate_limit"]
                    rate_limit = RateLimit(int(rl["capacity"]), int(rl["refill_per_minute"]))
                raw, key = self.platform.issue_key(key_scope, rate_limit)
                await _send_json(send, 200, {"raw_token": raw, "key": _key_to_json(key)})
                return

        if len(parts) == 3 and parts[1] == "keys" and method == "DELETE":
            actor = self._actor_user(principal)
            key = tenancy.get_key(parts[2])
            self._require_key_control(actor, key.scope)
            await _send_json(send, 200, _key_to_json(tenancy.revoke_key(key.id)))
            return

        if len(parts) == 3 and parts[1] == "usage" and method == "GET":
            actor = self._actor_user(principal)
            key = tenancy.get_key(parts[2])
            self._require_key_control(actor, key.scope)
            query = parse_qs(scope.get("query_string", b"").decode("latin-1"))
            start = int(query.get("start", ["0"])[0])
            end = int(query.get("end", [str(now_ms() + 1)])[0])
            summary = self.platform.ledger.summarize(key.id, (start, end))
            await _send_json(
                send,
                200,
                {
                    "key_id": key.id,
                    "request_count": summary.request_count,
                    "prompt_tokens": summary.prompt_tokens,
                    "completion_tokens": summary.completion_tokens,
                },
            )
            return

        raise FabricError("INVALID_REQUEST", f"no route {method} {path}")

    def _key_visible(self, actor: str, key) -> bool:
        try:
            self._require_key_control(actor, key.scope)
            return True
        except FabricError:
            return False

    def _require_key_control(self, actor: str, key_scope: KeyScope) -> None:
        """Users control their own keys and the keys of projects they admin."""
        if key_scope.kind == SCOPE_USER:
            if key_scope.subject_id == actor:
                return
            raise FabricError("FORBIDDEN", "cannot manage another user's keys")
        if key_scope.kind == SCOPE_PROJECT:
            project = self.platform.tenancy.get_project(key_scope.subject_id)
            role = project.members.get(actor)
            if role in (ROLE_ADMIN, ROLE_OWNER):
                return
            raise FabricError("FORBIDDEN", f"need ADMIN on project {project.id!r}")
        raise FabricError("UNKNOWN_SCOPE", f"bad scope kind {key_scope.kind!r}")

    # -- static UI ------------------------------------------------------------

    async def _serve_ui(self, send, path: str) -> bool:
        relative = "index.html" if path == "/" else path.lstrip("/")
        full = os.path.abspath(os.path.join(self.ui_dir, relative))
        if not full.startswith(self.ui_dir + os.sep):
            return False
        if not os.path.isfile(full):
            return False
        content_type = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            data = fh.read()
        await send(
            {
                "type": "http.response.start",
                "status": 200,
                "headers": [
                    (b"content-type", content_type.encode("latin-1")),
                    (b"content-length", str(len(data)).encode("latin-1")),
                ],
            }
        )
        await send({"type": "http.response.body", "body": data})
        return True


# -- module-level helpers -----------------------------------------------------


async def _read_body(receive) -> bytes:
    chunks = []
    while True:
        message = await receive()
        if message["type"] == "http.request":
            chunks.append(message.get("body", b""))
            if not message.get("more_body", False):
                break
        elif message["type"] == "http.disconnect":
            break
    return b"".join(chunks)


async def _read_json(receive, none_on_error: bool = False):
    raw = await _read_body(receive)
    try:
        return json.loads(raw)
    except ValueError:
        if none_on_error:
            return None
        raise FabricError("INVALID_REQUEST", "body is not valid JSON") from None


async def _send_json(send, status: int, obj) -> None:
    data = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    await send(
        {
            "type": "http.response.start",
            "status": status,
            "headers": [
                (b"content-type", b"application/json"),
                (b"content-length", str(len(data)).encode("latin-1")),
            ],
        }
    )
    await send({"type": "http.response.body", "body": data})


def _field(body, name: str, kind):
    if not isinstance(body, dict) or name not in body:
        raise FabricError("INVALID_REQUEST", f"missing field {name!r}")
    value = body[name]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise FabricError("INVALID_REQUEST", f"{name} must be an integer")
    elif not isinstance(value, kind):
        raise FabricError("INVALID_REQUEST", f"{name} must be {kind.__name__}")
    return value


def _agent_to_json(record) -> dict:
    return {
        "agent_id": record.agent_id,
        "tenant_id": record.tenant_id,
        "base_model_id": record.base_model_id,
        "max_concurrency": record.max_concurrency,
        "active_requests": record.active_requests,
        "state": record.state,
        "last_heartbeat_at": record.last_heartbeat_at,
        "last_seq": record.last_seq,
        "endpoint": record.endpoint,
        "shared": record.shared,
    }


def _project_to_json(project) -> dict:
    return {
        "id": project.id,
        "name": project.name,
        "owner": project.owner,
        "members": [
            {"user_id": uid, "role": role} for uid, role in sorted(project.members.items())
        ],
        "adapter_grants": sorted(project.adapter_grants),
        "created_at": project.created_at,
    }


def _key_to_json(key) -> dict:
    return {
        "id": key.id,
        "token_prefix": "lf-",
        "scope": {"kind": key.scope.kind, "subject_id": key.scope.subject_id},
        "status": key.status,
        "created_at": key.created_at,
        "revoked_at": key.revoked_at,
        "rate_limit": {
            "capacity": key.rate_limit.capacity,
            "refill_per_minute": key.rate_limit.refill_per_minute,
        },
    }


def build_app(
    platform: Platform, ui_dir: Optional[str] = None, sweep_interval_s: Optional[float] = None
) -> Api:
    return Api(platform, ui_dir=ui_dir, sweep_interval_s=sweep_interval_s)
