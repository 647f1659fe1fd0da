"""OpenAI-compatible ingress: validation, authorization, routing, auditing.

The chat pipeline is authenticate, rate-check, validate, resolve the model
identifier, authorize every resolved adapter, route, respond. Exactly one
audit record is written per request regardless of outcome, and the adapter
set dispatched to a backend is exactly the authorized resolved set.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass
from typing import Optional, Sequence

from .embeddings import embed_text
from .errors import FabricError
from .registry import Registry
from .router import Message, Router, regenerate_request, select_backend
from .tenancy import SCOPE_PROJECT, Principal, TenancyStore, now_ms
from .usage_audit import AuditLedger, RateLimiter, count_tokens

MAX_TOKENS_CEILING = 4096
MAX_EMBEDDING_BATCH = 256

FINISH_STOP = "STOP"
FINISH_LENGTH = "LENGTH"
FINISH_ERROR = "ERROR"

API_ERROR_HTTP_STATUS = {
    "UNAUTHENTICATED": 401,
    "FORBIDDEN": 403,
    "INVALID_REQUEST": 400,
    "UNKNOWN_MODEL": 404,
    "RATE_LIMITED": 429,
    "NO_BACKEND": 503,
    "BACKEND_FAILURE": 502,
}

_ALLOWED_FIELDS = {"model", "messages", "temperature", "max_tokens", "adapter_weights"}
_ALLOWED_ROLES = {"system", "user", "assistant"}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 1.0
    max_tokens: int = 256
    adapter_weights: Optional[tuple[tuple[str, float], ...]] = None


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class ChatResponse:
    id: str
    model: str
    text: str
    finish_reason: str
    usage: Usage

    def to_openai(self) -> dict:
        return {
            "id": self.id,
            "object": "chat.completion",
            "model": self.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": self.text},
                    "finish_reason": self.finish_reason.lower(),
                }
            ],
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
                "total_tokens": self.usage.total_tokens,
            },
        }


@dataclass(frozen=True)
class ApiError:
    http_status: int
    code: str
    message: str

    def to_body(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


def api_error_from(err: FabricError) -> ApiError:
    """Map any internal failure onto the fixed public error vocabulary."""
    code = err.code if err.code in API_ERROR_HTTP_STATUS else "BACKEND_FAILURE"
    return ApiError(API_ERROR_HTTP_STATUS[code], code, err.message)


def _require_number(value, low: float, high: float, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FabricError("INVALID_REQUEST", f"{path} must be a number")
    if not (low <= value <= high):
        raise FabricError("INVALID_REQUEST", f"{path} must be within [{low}, {high}]")
    return float(value)


def validate_request(body, max_tokens_ceiling: int = MAX_TOKENS_CEILING) -> ChatRequest:
    """Strict parse: unknown fields are rejected, bounds are enforced."""
    if not isinstance(body, dict):
        raise FabricError("INVALID_REQUEST", "body must be a JSON object")
    for field in body:
        if field not in _ALLOWED_FIELDS:
            raise FabricError("INVALID_REQUEST", f"unknown field {field!r}")

    model = body.get("model")
    if not isinstance(model, str) or not model:
        raise FabricError("INVALID_REQUEST", "model must be a non-empty string")

    raw_messages = body.get("messages")
    if not isinstance(raw_messages, list) or not raw_messages:
        raise FabricError("INVALID_REQUEST", "messages must be a non-empty list")
    messages: list[Message] = []
    for i, item in enumerate(raw_messages):
        path = f"messages[{i}]"
        if not isinstance(item, dict):
            raise FabricError("INVALID_REQUEST", f"{path} must be an object")
        for field in item:
            if field not in ("role", "content"):
                raise FabricError("INVALID_REQUEST", f"unknown field {path}.{field}")
        role = item.get("role")
        content = item.get("content")
        if role not in _ALLOWED_ROLES:
            raise FabricError("INVALID_REQUEST", f"{path}.role must be one of {sorted(_ALLOWED_ROLES)}")
        if not isinstance(content, str):
            raise FabricError("INVALID_REQUEST", f"{path}.content must be a string")
        if role == "system" and i != 0:
            raise FabricError("INVALID_REQUEST", f"{path}: system message must be first and unique")
        messages.append(Message(role=role, content=content))

    temperature = 1.0
    if "temperature" in body:
        temperature = _require_number(body["temperature"], 0.0, 2.0, "temperature")

    max_tokens = 256
    if "max_tokens" in body:
        raw = body["max_tokens"]
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise FabricError("INVALID_REQUEST", "max_tokens must be an integer")
        if not (1 <= raw <= max_tokens_ceiling):
            raise FabricError("INVALID_REQUEST", f"max_tokens must be within [1, {max_tokens_ceiling}]")
        max_tokens = raw

    adapter_weights: Optional[tuple[tuple[str, float], ...]] = None
    if "adapter_weights" in body:
        raw_weights = body["adapter_weights"]
        if not isinstance(raw_weights, dict) or not raw_weights:
            raise FabricError("INVALID_REQUEST", "adapter_weights must be a non-empty object")
        pairs: list[tuple[str, float]] = []
        for adapter_id, weight in raw_weights.items():
            path = f"adapter_weights.{adapter_id}"
            if not isinstance(adapter_id, str) or not adapter_id:
                raise FabricError("INVALID_REQUEST", "adapter_weights keys must be adapter ids")
            if isinstance(weight, bool) or not isinstance(weight, (int, float)) or weight < 0:
                raise FabricError("INVALID_REQUEST", f"{path} must be a non-negative number")
            pairs.append((adapter_id, float(weight)))
        adapter_weights = tuple(pairs)

    return ChatRequest(
        model=model,
        messages=tuple(messages),
        temperature=temperature,
        max_tokens=max_tokens,
        adapter_weights=adapter_weights,
    )


@dataclass
class _ChatOutcome:
    http_status: int
    body: dict
    audit_status: str
    model_id: str
    adapters: tuple[tuple[str, float], ...]
    prompt_tokens: int = 0
    completion_tokens: int = 0


class Gateway:
    def __init__(
        self,
        tenancy: TenancyStore,
        registry: Registry,
        overlay,
        router: Router,
        templates,
        ledger: AuditLedger,
        rate: RateLimiter,
        max_tokens_ceiling: int = MAX_TOKENS_CEILING,
    ):
        self.tenancy = tenancy
        self.registry = registry
        self.overlay = overlay
        self.router = router
        self.templates = templates
        self.ledger = ledger
        self.rate = rate
        self.max_tokens_ceiling = max_tokens_ceiling

    # -- model resolution ---------------------------------------------------

    def resolve_model(self, chat: ChatRequest) -> tuple[str, tuple[tuple[str, float], ...]]:
        """Map the model field to (base_model_id, weighted adapter list).

        Resolution order is exact mixture id, then adapter id, then base
        model id. An adapter_weights override replaces the adapter set and
        must stay on the resolved base model.
        """
        mixture = self.registry.find_mixture(chat.model)
        if mixture is not None:
            base_model_id = mixture.base_model_id
            resolved = mixture.components
        else:
            adapter = self.registry.find_adapter(chat.model)
            if adapter is not None:
                base_model_id = adapter.base_model_id
                resolved = ((adapter.id, 1.0),)
            else:
                try:
                    self.registry.get_base_model(chat.model)
                except FabricError as exc:
                    raise FabricError("UNKNOWN_MODEL", f"no model {chat.model!r}") from exc
                base_model_id = chat.model
                resolved = ()

        if chat.adapter_weights is not None:
            try:
                normalized = self.registry.normalize_components(list(chat.adapter_weights))
            except FabricError as exc:
                if exc.code == "UNKNOWN_ADAPTER":
                    raise FabricError("UNKNOWN_MODEL", exc.message) from exc
                raise FabricError("INVALID_REQUEST", exc.message) from exc
            if normalized.base_model_id != base_model_id:
                raise FabricError(
                    "INVALID_REQUEST",
                    "adapter_weights adapters are not trained on the requested base model",
                )
            resolved = normalized.components
        return base_model_id, resolved

    # -- views ------------------------------------------------------------------

    def principal_projects(self, principal: Principal) -> frozenset[str]:
        if principal.scope.kind == SCOPE_PROJECT:
            return frozenset({principal.scope.subject_id})
        return self.tenancy.user_projects(principal.scope.subject_id)

    def _membership_view(self, principal: Principal):
        return self.overlay.view_for_tenants(self.principal_projects(principal))

    # -- chat -----------------------------------------------------------------

    async def handle_chat(self, raw_token: str, body) -> tuple[int, dict]:
        """Full ingress pipeline; returns (http_status, response body)."""
        started = time.perf_counter()
        timestamp = now_ms()
        key_id = ""
        project_id: Optional[str] = None
        outcome = None
        try:
            principal = self.tenancy.authenticate(raw_token)
            key_id = principal.key_id
            if principal.scope.kind == SCOPE_PROJECT:
                project_id = principal.scope.subject_id
            if not self.rate.check_rate(key_id, now_ms()):
                raise FabricError("RATE_LIMITED", "per-key request budget exhausted")
            chat = validate_request(body, self.max_tokens_ceiling)
            base_model_id, resolved = self.resolve_model(chat)
            for adapter_id, _ in resolved:
                if not self.tenancy.authorize_adapter(principal, adapter_id):
                    raise FabricError("FORBIDDEN", f"adapter {adapter_id!r} is not granted to this key")
            base = self.registry.get_base_model(base_model_id)
            breq = regenerate_request(chat, resolved, self.templates, base.prompt_template_id)
            decision = select_backend(base_model_id, self._membership_view(principal))
            response, _ = await self.router.dispatch(breq, decision)
            text = response["generated_text"]
            details = response.get("details") or {}
            completion_tokens = int(details.get("generated_tokens", count_tokens(text)))
            usage = Usage(count_tokens(breq.inputs), completion_tokens)
            finish = FINISH_LENGTH if completion_tokens >= chat.max_tokens else FINISH_STOP
            result = ChatResponse(
                id="chatcmpl-" + uuid.uuid4().hex[:12],
                model=chat.model,
                text=text,
                finish_reason=finish,
                usage=usage,
            )
            outcome = _ChatOutcome(
                http_status=200,
                body=result.to_openai(),
                audit_status="OK",
                model_id=chat.model,
                adapters=resolved,
                prompt_tokens=usage.prompt_tokens,
                completion_tokens=usage.completion_tokens,
            )
        except FabricError as err:
            api_error = api_error_from(err)
            # The ledger status vocabulary folds UNKNOWN_MODEL into
            # INVALID_REQUEST; the HTTP error keeps the distinct code.
            audit_status = api_error.code if api_error.code != "UNKNOWN_MODEL" else "INVALID_REQUEST"
            model_field = body.get("model") if isinstance(body, dict) else ""
            outcome = _ChatOutcome(
                http_status=api_error.http_status,
                body=api_error.to_body(),
                audit_status=audit_status,
                model_id=model_field if isinstance(model_field, str) else "",
                adapters=(),
            )
        latency_ms = int((time.perf_counter() - started) * 1000)
        try:
            self.ledger.append(
                timestamp=timestamp,
                key_id=key_id,
                project_id=project_id,
                model_id=outcome.model_id,
                adapters=outcome.adapters,
                prompt_tokens=outcome.prompt_tokens,
                completion_tokens=outcome.completion_tokens,
                latency_ms=latency_ms,
                status=outcome.audit_status,
            )
        except Exception:
            # Fail closed: a request that cannot be audited did not happen.
            failure = ApiError(502, "BACKEND_FAILURE", "audit write failed")
            return failure.http_status, failure.to_body()
        return outcome.http_status, outcome.body

    # -- models -----------------------------------------------------------------

    def list_models(self, raw_token: str) -> list[str]:
        principal = self.tenancy.authenticate(raw_token)
        ids = [m.id for m in self.registry.list_base_models()]
        ids.extend(a.id for a in self.registry.list_adapters(principal, self.tenancy))
        for mixture in self.registry.list_mixtures():
            if all(
                self.tenancy.authorize_adapter(principal, adapter_id)
                for adapter_id, _ in mixture.components
            ):
                ids.append(mixture.id)
        return ids

    # -- embeddings ----------------------------------------------------------------

    def handle_embeddings(self, raw_token: str, texts) -> list[list[float]]:
        self.tenancy.authenticate(raw_token)
        if not isinstance(texts, list) or not texts or len(texts) > MAX_EMBEDDING_BATCH:
            raise FabricError(
                "INVALID_REQUEST", f"input must be a list of 1..{MAX_EMBEDDING_BATCH} strings"
            )
        if not all(isinstance(t, str) for t in texts):
            raise FabricError("INVALID_REQUEST", "input items must be strings")
        return [embed_text(t) for t in texts]
