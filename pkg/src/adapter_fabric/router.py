"""Request regeneration and backend routing.

Every ingress request is regenerated into a fresh backend-native body
built only from validated fields; client bytes are never forwarded. The
wire shape is {"inputs": <prompt>, "parameters": {...}} posted to the
agent's /generate endpoint. Selection is least-loaded among HEALTHY agents
bound to the right base model, with one failover retry on transport-level
failure only.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .errors import FabricError
from .overlay import (
    STATE_HEALTHY,
    AgentRecord,
    KeyRing,
    MembershipView,
    SealedEnvelope,
    open_envelope,
    seal,
)

ADAPTER_SOURCE_LOCAL = "local"

REASON_LEAST_LOADED = "LEAST_LOADED"
REASON_ONLY_CANDIDATE = "ONLY_CANDIDATE"
REASON_FAILOVER = "FAILOVER"

SEALED_CONTENT_TYPE = "application/x-sealed+json"


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


def _default_template(messages: Sequence[Message]) -> str:
    # System prompt (if any) leads, then turns in order, one per line.
    return "[INST] " + "\n".join(m.content for m in messages) + " [/INST]"


class PromptTemplates:
    """Named deterministic renderers from a message list to one prompt string."""

    def __init__(self):
        self._templates: dict[str, Callable[[Sequence[Message]], str]] = {
            "default": _default_template
        }

    def register(self, template_id: str, render: Callable[[Sequence[Message]], str]) -> None:
        self._templates[template_id] = render

    def render(self, template_id: str, messages: Sequence[Message]) -> str:
        template = self._templates.get(template_id)
        if template is None:
            raise FabricError("UNKNOWN_TEMPLATE", f"no prompt template {template_id!r}")
        return template(messages)


def render_prompt(templates: PromptTemplates, template_id: str, messages: Sequence[Message]) -> str:
    return templates.render(template_id, messages)


@dataclass(frozen=True)
class BackendRequest:
    inputs: str
    temperature: float
    max_new_tokens: int
    adapter_id: Optional[str] = None
    adapter_source: Optional[str] = None
    adapter_weights: Optional[tuple[tuple[str, float], ...]] = None

    def to_wire(self) -> dict:
        parameters: dict = {
            "temperature": self.temperature,
            "max_new_tokens": self.max_new_tokens,
        }
        if self.adapter_id is not None:
            parameters["adapter_id"] = self.adapter_id
            parameters["adapter_source"] = self.adapter_source or ADAPTER_SOURCE_LOCAL
        if self.adapter_weights is not None:
            parameters["adapter_weights"] = [[a, w] for a, w in self.adapter_weights]
        return {"inputs": self.inputs, "parameters": parameters}

    def to_wire_json(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False)


def regenerate_request(
    chat,
    resolved: Sequence[tuple[str, float]],
    templates: PromptTemplates,
    template_id: str = "default",
) -> BackendRequest:
    """Build the backend-native request from already-validated ingress fields.

    One adapter becomes adapter_id + adapter_source "local"; several become
    an ordered adapter_weights list; none leaves both fields absent.
    """
    inputs = templates.render(template_id, chat.messages)
    if len(resolved) == 1:
        return BackendRequest(
            inputs=inputs,
            temperature=chat.temperature,
            max_new_tokens=chat.max_tokens,
            adapter_id=resolved[0][0],
            adapter_source=ADAPTER_SOURCE_LOCAL,
        )
    if len(resolved) > 1:
        return BackendRequest(
            inputs=inputs,
            temperature=chat.temperature,
            max_new_tokens=chat.max_tokens,
            adapter_weights=tuple(resolved),
        )
    return BackendRequest(
        inputs=inputs,
        temperature=chat.temperature,
        max_new_tokens=chat.max_tokens,
    )


@dataclass(frozen=True)
class RoutingDecision:
    chosen_agent: str
    candidates: tuple[str, ...]
    reason: str


def select_backend(base_model_id: str, view: MembershipView) -> RoutingDecision:
    """Least-loaded HEALTHY agent for the base model; ties go to the smaller id."""
    eligible = [
        a
        for a in view
        if a.state == STATE_HEALTHY
        and a.base_model_id == base_model_id
        and a.active_requests < a.max_concurrency
    ]
    if not eligible:
        raise FabricError("NO_BACKEND", f"no healthy backend for {base_model_id!r}")
    eligible.sort(key=lambda a: (a.active_requests, a.agent_id))
    candidates = tuple(a.agent_id for a in eligible)
    reason = REASON_ONLY_CANDIDATE if len(candidates) == 1 else REASON_LEAST_LOADED
    return RoutingDecision(chosen_agent=candidates[0], candidates=candidates, reason=reason)


class TransportFailure(Exception):
    """Connection-level failure (refused, reset, timeout); eligible for failover."""


class AiohttpSender:
    """Default HTTP transport: POST body to {endpoint}/generate."""

    def __init__(self):
        self._session = None

    async def _get_session(self):
        import aiohttp

        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession(
                connector=aiohttp.TCPConnector(limit=0), json_serialize=json.dumps
            )
        return self._session

    async def __call__(self, agent: AgentRecord, body: bytes, content_type: str, timeout_s: float):
        import aiohttp

        session = await self._get_session()
        url = agent.endpoint.rstrip("/") + "/generate"
        try:
            async with session.post(
                url,
                data=body,
                headers={"Content-Type": content_type},
                timeout=aiohttp.ClientTimeout(total=timeout_s),
            ) as resp:
                payload = await resp.read()
                if resp.status == 503:
                    # Over-capacity refusal: treated as transport-level.
                    raise TransportFailure(f"{agent.agent_id} refused (503)")
                return resp.status, payload
        except TransportFailure:
            raise
        except (aiohttp.ClientError, asyncio.TimeoutError, OSError) as exc:
            raise TransportFailure(f"{agent.agent_id}: {exc}") from exc

    async def aclose(self):
        if self._session is not None and not self._session.closed:
            await self._session.close()


class Router:
    """Dispatches regenerated requests to agents selected from a membership view."""

    def __init__(self, overlay, keyring: Optional[KeyRing] = None, sender=None, timeout_s: float = 30.0):
        self.overlay = overlay
        self.keyring = keyring
        self.sender = sender or AiohttpSender()
        self.timeout_s = timeout_s

    def _encode(self, breq: BackendRequest, agent: AgentRecord) -> tuple[bytes, str]:
        wire = breq.to_wire_json().encode("utf-8")
        key = self.keyring.get(agent.tenant_id) if self.keyring else None
        if key is None:
            return wire, "application/json"
        envelope = seal(key, wire, f"{agent.agent_id}:/generate".encode("utf-8"), agent.tenant_id)
        return envelope.to_json().encode("utf-8"), SEALED_CONTENT_TYPE

    def _decode(self, payload: bytes, agent: AgentRecord) -> dict:
        try:
            doc = json.loads(payload)
        except ValueError as exc:
            raise FabricError("BACKEND_FAILURE", f"unparseable backend response: {exc}") from exc
        if isinstance(doc, dict) and "ciphertext" in doc and "nonce" in doc:
            key = self.keyring.get(agent.tenant_id) if self.keyring else None
            if key is None:
                raise FabricError("BACKEND_FAILURE", "sealed response but no tenant key")
            doc = json.loads(open_envelope(key, SealedEnvelope.from_json(payload)))
        if not isinstance(doc, dict) or "generated_text" not in doc:
            raise FabricError("BACKEND_FAILURE", "backend response missing generated_text")
        return doc

    async def _attempt(self, breq: BackendRequest, agent: AgentRecord, timeout_s: float) -> dict:
        body, content_type = self._encode(breq, agent)
        self.overlay.begin_dispatch(agent.agent_id)
        try:
            status, payload = await self.sender(agent, body, content_type, timeout_s)
        finally:
            self.overlay.end_dispatch(agent.agent_id)
        if status != 200:
            raise FabricError("BACKEND_FAILURE", f"{agent.agent_id} returned HTTP {status}")
        return self._decode(payload, agent)

    async def dispatch(
        self, breq: BackendRequest, decision: RoutingDecision, deadline_s: Optional[float] = None
    ) -> tuple[dict, RoutingDecision]:
        """Send to the chosen agent with at most one failover on transport failure.

        Application-level errors never trigger a retry. Returns the backend
        response and the decision that actually produced it.
        """
        timeout_s = deadline_s if deadline_s is not None else self.timeout_s
        agent = self.overlay.get_agent(decision.chosen_agent)
        try:
            return await self._attempt(breq, agent, timeout_s), decision
        except TransportFailure:
            fallbacks = [c for c in decision.candidates if c != decision.chosen_agent]
            if not fallbacks:
                raise FabricError("NO_BACKEND", "no second candidate for failover")
            retry = RoutingDecision(
                chosen_agent=fallbacks[0],
                candidates=decision.candidates,
                reason=REASON_FAILOVER,
            )
            second = self.overlay.get_agent(retry.chosen_agent)
            try:
                return await self._attempt(breq, second, timeout_s), retry
            except TransportFailure as exc:
                raise FabricError("BACKEND_FAILURE", f"both attempts failed: {exc}") from exc

    async def aclose(self):
        closer = getattr(self.sender, "aclose", None)
        if closer is not None:
            await closer()
