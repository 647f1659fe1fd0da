"""Deterministic mock inference backend speaking the router's wire protocol.

Completion text is a pure function of (prompt, adapter spec, seed), tagged
with the adapter so end-to-end tests can assert that the right adapter
reached the right backend. Service time is simulated (FIXED or LOGNORMAL),
the first request per adapter pays a one-time load penalty, and requests
beyond max_concurrency are refused at transport level (HTTP 503).
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import random
from dataclasses import dataclass
from typing import Optional

from ..errors import FabricError
from ..overlay import SealedEnvelope, open_envelope, seal
from ..tenancy import now_ms
from ..usage_audit import count_tokens

SERVICE_FIXED = "FIXED"
SERVICE_LOGNORMAL = "LOGNORMAL"


@dataclass(frozen=True)
class ServiceTime:
    kind: str  # FIXED | LOGNORMAL
    ms: float = 0.0  # FIXED
    mu: float = 0.0  # LOGNORMAL: log-space mean
    sigma: float = 0.0  # LOGNORMAL: log-space stddev

    @staticmethod
    def from_json(doc: dict) -> "ServiceTime":
        kind = doc.get("kind", SERVICE_FIXED)
        if kind == SERVICE_FIXED:
            return ServiceTime(kind=SERVICE_FIXED, ms=float(doc.get("ms", 0.0)))
        if kind == SERVICE_LOGNORMAL:
            return ServiceTime(
                kind=SERVICE_LOGNORMAL,
                mu=float(doc.get("mu", 0.0)),
                sigma=float(doc.get("sigma", 0.0)),
            )
        raise ValueError(f"unknown service_time kind {kind!r}")


@dataclass(frozen=True)
class MockBackendConfig:
    agent_id: str
    tenant_id: str
    base_model_id: str
    service_time: ServiceTime
    adapter_first_load_penalty_ms: int = 0
    max_concurrency: int = 64
    seed: int = 0
    port: int = 0
    shared: bool = True
    tenant_key_b64: Optional[str] = None

    @staticmethod
    def from_json(doc: dict) -> "MockBackendConfig":
        return MockBackendConfig(
            agent_id=doc["agent_id"],
            tenant_id=doc.get("tenant_id", "public"),
            base_model_id=doc["base_model_id"],
            service_time=ServiceTime.from_json(doc.get("service_time", {})),
            adapter_first_load_penalty_ms=int(doc.get("adapter_first_load_penalty_ms", 0)),
            max_concurrency=int(doc.get("max_concurrency", 64)),
            seed=int(doc.get("seed", 0)),
            port=int(doc.get("port", 0)),
            shared=bool(doc.get("shared", True)),
            tenant_key_b64=doc.get("tenant_key_b64"),
        )

    @property
    def tenant_key(self) -> Optional[bytes]:
        if self.tenant_key_b64 is None:
            return None
        return base64.b64decode(self.tenant_key_b64)


def adapter_tag(parameters: dict) -> str:
    """Canonical label for the adapter spec carried by a wire request."""
    adapter_id = parameters.get("adapter_id")
    if adapter_id is not None:
        return str(adapter_id)
    weights = parameters.get("adapter_weights")
    if weights:
        return "mix(" + ",".join(f"{a}={float(w):.4f}" for a, w in weights) + ")"
    return "base"


def generated_text(prompt: str, tag: str, seed: int) -> str:
    digest = hashlib.sha256(f"{seed}|{tag}|{prompt}".encode("utf-8")).hexdigest()[:16]
    return f"[{tag}] {digest}"


class MockBackend:
    """ASGI app: POST /generate and GET /healthz; single-loop state, no locks."""

    def __init__(self, config: MockBackendConfig):
        self.config = config
        self.active = 0
        self.served = 0
        self._loaded_adapters: set[str] = set()
        self._rng = random.Random(config.seed)

    def _service_ms(self) -> float:
        st = self.config.service_time
        if st.kind == SERVICE_FIXED:
            return max(0.0, st.ms)
        return max(0.0, self._rng.lognormvariate(st.mu, st.sigma))

    async def __call__(self, scope, receive, send):
        if scope["type"] == "lifespan":
            while True:
                message = await receive()
                if message["type"] == "lifespan.startup":
                    await send({"type": "lifespan.startup.complete"})
                elif message["type"] == "lifespan.shutdown":
                    await send({"type": "lifespan.shutdown.complete"})
                    return
        if scope["type"] != "http":
            return
        method, path = scope["method"], scope["path"]
        if method == "GET" and path == "/healthz":
            await self._send_json(
                send,
                200,
                {"status": "ok", "agent_id": self.config.agent_id, "served": self.served},
            )
            return
        if method == "POST" and path == "/generate":
            await self._generate(receive, send)
            return
        await self._send_json(send, 404, {"error": "not found"})

    async def _generate(self, receive, send):
        if self.active >= self.config.max_concurrency:
            # Transport-level refusal: the router treats this as failover-worthy.
            await self._send_json(send, 503, {"error": "over capacity"})
            return
        self.active += 1
        try:
            body = await _read_body(receive)
            sealed = False
            try:
                doc = json.loads(body)
            except ValueError:
                await self._send_json(send, 400, {"error": "bad json"})
                return
            if isinstance(doc, dict) and "ciphertext" in doc and "nonce" in doc:
                key = self.config.tenant_key
                if key is None:
                    await self._send_json(send, 400, {"error": "sealed request but no tenant key"})
                    return
                try:
                    doc = json.loads(open_envelope(key, SealedEnvelope.from_json(body)))
                except FabricError:
                    await self._send_json(send, 400, {"error": "decrypt failed"})
                    return
                sealed = True
            if not isinstance(doc, dict) or "inputs" not in doc or "parameters" not in doc:
                await self._send_json(send, 400, {"error": "bad wire shape"})
                return

            parameters = doc["parameters"]
            tag = adapter_tag(parameters)
            delay_ms = self._service_ms()
            if tag != "base" and tag not in self._loaded_adapters:
                self._loaded_adapters.add(tag)
                delay_ms += self.config.adapter_first_load_penalty_ms
            if delay_ms > 0:
                await asyncio.sleep(delay_ms / 1000.0)

            text = generated_text(doc["inputs"], tag, self.config.seed)
            response = {
                "generated_text": text,
                "details": {"generated_tokens": count_tokens(text)},
            }
            self.served += 1
            if sealed:
                envelope = seal(
                    self.config.tenant_key,
                    json.dumps(response, ensure_ascii=False).encode("utf-8"),
                    f"response:{self.config.agent_id}".encode("utf-8"),
                    self.config.tenant_id,
                )
                await self._send_raw(send, 200, envelope.to_json().encode("utf-8"))
            else:
                await self._send_json(send, 200, response)
        finally:
            self.active -= 1

    async def _send_json(self, send, status: int, obj) -> None:
        await self._send_raw(send, status, json.dumps(obj, ensure_ascii=False).encode("utf-8"))

    async def _send_raw(self, send, status: int, data: bytes) -> None:
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


class HeartbeatClient:
    """Registers one agent with the gateway and keeps heartbeats flowing."""

    def __init__(self, gateway_url: str, backend: MockBackend, endpoint: str, interval_s: float = 5.0):
        self.gateway_url = gateway_url.rstrip("/")
        self.backend = backend
        self.endpoint = endpoint
        self.interval_s = interval_s
        self._seq = 0

    async def register(self, session) -> None:
        config = self.backend.config
        body = {
            "agent_id": config.agent_id,
            "tenant_id": config.tenant_id,
            "base_model_id": config.base_model_id,
            "max_concurrency": config.max_concurrency,
            "endpoint": self.endpoint,
            "shared": config.shared,
        }
        async with session.post(self.gateway_url + "/agents/register", json=body) as resp:
            # 409 means a live record already exists; heartbeats will adopt it.
            if resp.status not in (200, 409):
                raise RuntimeError(f"register failed: HTTP {resp.status}")

    async def beat_once(self, session) -> None:
        self._seq += 1
        body = {
            "agent_id": self.backend.config.agent_id,
            "seq": self._seq,
            "active_requests": self.backend.active,
            "sent_at": now_ms(),
        }
        async with session.post(self.gateway_url + "/agents/heartbeat", json=body) as resp:
            await resp.read()

    async def run(self) -> None:
        import aiohttp

        async with aiohttp.ClientSession() as session:
            while True:
                try:
                    await self.register(session)
                    break
                except Exception:
                    await asyncio.sleep(0.2)
            while True:
                try:
                    await self.beat_once(session)
                except Exception:
                    pass
                await asyncio.sleep(self.interval_s)


async def _bound_port(server) -> int:
    # port 0 means the OS picks one; the real port is only known after bind.
    while not server.started:
        await asyncio.sleep(0.05)
    return server.servers[0].sockets[0].getsockname()[1]


async def _heartbeat_when_bound(
    server,
    backend: MockBackend,
    host: str,
    register_to: str,
    interval_s: float,
) -> None:
    port = await _bound_port(server)
    client = HeartbeatClient(
        register_to,
        backend,
        endpoint=f"http://{host}:{port}",
        interval_s=interval_s,
    )
    await client.run()


async def serve_backends(
    configs: list[MockBackendConfig],
    host: str = "127.0.0.1",
    register_to: Optional[str] = None,
    heartbeat_interval_s: float = 5.0,
) -> None:
    """Run every configured backend (and its heartbeat loop) until cancelled."""
    import uvicorn

    tasks = []
    for config in configs:
        backend = MockBackend(config)
        server = uvicorn.Server(
            uvicorn.Config(
                backend,
                host=host,
                port=config.port,
                log_level="warning",
                access_log=False,
                lifespan="off",
            )
        )
        tasks.append(asyncio.create_task(server.serve()))
        if register_to:
            tasks.append(
                asyncio.create_task(
                    _heartbeat_when_bound(
                        server, backend, host, register_to, heartbeat_interval_s
                    )
                )
            )
    await asyncio.gather(*tasks)
