"""Catalog of base models, adapters, and weighted adapter mixtures.

Adapter weights are metadata only: the catalog holds artifact URIs, never
artifact bytes. Mixtures are normalized onto the simplex at resolution
time and keyed by a content hash so identical compositions share an id.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import FabricError

SUPPORTED_FAMILIES = (
    "Bloom",
    "GPT2",
    "Llama",
    "Mistral",
    "Mixtral",
    "Phi",
    "Qwen",
    "Zephyr",
)

PRECISION_BYTES = {"FP32": 4.0, "FP16": 2.0, "INT8": 1.0, "INT4": 0.5}

VISIBILITY_PUBLIC = "PUBLIC"
VISIBILITY_PRIVATE = "PRIVATE"

_ADAPTER_ID_RE = re.compile(r"[a-z0-9_/-]+")
_URI_SCHEMES = ("s3://", "file://", "https://")

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class BaseModel:
    id: str
    family: str
    parameter_count: int
    precision: str
    prompt_template_id: str = "default"


@dataclass(frozen=True)
class Adapter:
    id: str
    base_model_id: str
    artifact_uri: str
    targets: frozenset[str]
    rank: int
    visibility: str = VISIBILITY_PRIVATE
    owner_project: Optional[str] = None


@dataclass(frozen=True)
class AdapterMixture:
    id: str
    components: tuple[tuple[str, float], ...]
    base_model_id: str


def _mixture_id(components: Iterable[tuple[str, float]], base_model_id: str) -> str:
    canon = json.dumps(
        {"base": base_model_id, "components": [[a, w] for a, w in components]},
        sort_keys=True,
    )
    return "mix-" + hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


class Registry:
    """Read-mostly catalog; registrations serialize on one lock."""

    def __init__(self, families: tuple[str, ...] = SUPPORTED_FAMILIES):
        self._lock = threading.RLock()
        self._families = families
        self._base_models: dict[str, BaseModel] = {}
        self._adapters: dict[str, Adapter] = {}
        self._mixtures: dict[str, AdapterMixture] = {}

    # -- base models ------------------------------------------------------

    def register_base_model(
        self,
        model_id: str,
        family: str,
        parameter_count: int,
        precision: str,
        prompt_template_id: str = "default",
    ) -> BaseModel:
        with self._lock:
            if family not in self._families:
                raise FabricError("UNSUPPORTED_FAMILY", f"family {family!r} not supported")
            if parameter_count <= 0:
                raise FabricError("INVALID_REQUEST", "parameter_count must be positive")
            if precision not in PRECISION_BYTES:
                raise FabricError("INVALID_REQUEST", f"unknown precision {precision!r}")
            if model_id in self._base_models:
                raise FabricError("DUPLICATE_ID", f"base model {model_id!r} already registered")
            model = BaseModel(
                id=model_id,
                family=family,
                parameter_count=int(parameter_count),
                precision=precision,
                prompt_template_id=prompt_template_id,
            )
            self._base_models[model_id] = model
            return model

    def get_base_model(self, model_id: str) -> BaseModel:
        model = self._base_models.get(model_id)
        if model is None:
            raise FabricError("UNKNOWN_BASE_MODEL", f"no base model {model_id!r}")
        return model

    def list_base_models(self) -> list[BaseModel]:
        with self._lock:
            return sorted(self._base_models.values(), key=lambda m: m.id)

    def estimate_vram(self, model: BaseModel) -> int:
        """Weight-storage footprint in bytes; GB figures use 1e9 bytes."""
        return int(model.parameter_count * PRECISION_BYTES[model.precision])

    # -- adapters ------------------------------------------------------------

    def register_adapter(
        self,
        adapter_id: str,
        base_model_id: str,
        artifact_uri: str,
        targets: Iterable[str],
        rank: int,
        visibility: str = VISIBILITY_PRIVATE,
        owner_project: Optional[str] = None,
    ) -> Adapter:
        with self._lock:
            if not _ADAPTER_ID_RE.fullmatch(adapter_id or ""):
                raise FabricError("BAD_ID", f"adapter id {adapter_id!r} must match [a-z0-9_/-]+")
            if adapter_id in self._adapters:
                raise FabricError("DUPLICATE_ID", f"adapter {adapter_id!r} already registered")
            if base_model_id not in self._base_models:
                raise FabricError("UNKNOWN_BASE_MODEL", f"no base model {base_model_id!r}")
            target_set = frozenset(targets)
            if not target_set:
                raise FabricError("EMPTY_TARGETS", "adapter needs at least one target module")
            if not any(artifact_uri.startswith(s) and len(artifact_uri) > len(s) for s in _URI_SCHEMES):
                raise FabricError("BAD_URI", f"artifact_uri {artifact_uri!r} must use one of {_URI_SCHEMES}")
            if rank < 1:
                raise FabricError("INVALID_REQUEST", "rank must be >= 1")
            if visibility not in (VISIBILITY_PUBLIC, VISIBILITY_PRIVATE):
                raise FabricError("INVALID_REQUEST", f"unknown visibility {visibility!r}")
            adapter = Adapter(
                id=adapter_id,
                base_model_id=base_model_id,
                artifact_uri=artifact_uri,
                targets=target_set,
                rank=int(rank),
                visibility=visibility,
                owner_project=owner_project,
            )
            self._adapters[adapter_id] = adapter
            return adapter

    def get_adapter(self, adapter_id: str) -> Adapter:
        adapter = self._adapters.get(adapter_id)
        if adapter is None:
            raise FabricError("UNKNOWN_ADAPTER", f"no adapter {adapter_id!r}")
        return adapter

    def find_adapter(self, adapter_id: str) -> Optional[Adapter]:
        """Lookup without raising; wired into tenancy for grant checks."""
        return self._adapters.get(adapter_id)

    def list_all_adapters(self) -> list[Adapter]:
        with self._lock:
            return sorted(self._adapters.values(), key=lambda a: a.id)

    def list_adapters(self, principal, tenancy) -> list[Adapter]:
        """All adapters the principal may use: PUBLIC plus authorized PRIVATE."""
        return [
            a
            for a in self.list_all_adapters()
            if tenancy.authorize_adapter(principal, a.id)
        ]

    # -- mixtures ----------------------------------------------------------------

    def normalize_components(self, components: list[tuple[str, float]]) -> AdapterMixture:
        """Normalize a weighted adapter list onto the simplex, preserving order.

        Pure: validates and returns the mixture without cataloging it.
        """
        with self._lock:
            if not components:
                raise FabricError("INVALID_REQUEST", "mixture needs at least one component")
            seen: set[str] = set()
            base_ids: set[str] = set()
            for adapter_id, weight in components:
                if adapter_id in seen:
                    raise FabricError("INVALID_REQUEST", f"duplicate component {adapter_id!r}")
                seen.add(adapter_id)
                if weight < 0:
                    raise FabricError("INVALID_REQUEST", f"negative weight for {adapter_id!r}")
                base_ids.add(self.get_adapter(adapter_id).base_model_id)
            if len(base_ids) > 1:
                raise FabricError("MIXED_BASE_MODELS", f"components span base models {sorted(base_ids)}")
            total = sum(w for _, w in components)
            if total <= 0:
                raise FabricError("ALL_ZERO_WEIGHTS", "at least one weight must be positive")
            # Rounding keeps resolve(k*c) == resolve(c) bit-for-bit for any
            # k > 0: plain division can drift an ulp when k is not a power
            # of two, which would change the content-derived id.
            normalized = tuple((a, round(w / total, 12)) for a, w in components)
            base_model_id = base_ids.pop()
            return AdapterMixture(
                id=_mixture_id(normalized, base_model_id),
                components=normalized,
                base_model_id=base_model_id,
            )

    def resolve_mixture(self, components: list[tuple[str, float]]) -> AdapterMixture:
        """normalize_components plus cataloging under the content-derived id."""
        with self._lock:
            mixture = self.normalize_components(components)
            self._mixtures[mixture.id] = mixture
            return mixture

    def get_mixture(self, mixture_id: str) -> AdapterMixture:
        mixture = self._mixtures.get(mixture_id)
        if mixture is None:
            raise FabricError("UNKNOWN_MIXTURE", f"no mixture {mixture_id!r}")
        return mixture

    def find_mixture(self, mixture_id: str) -> Optional[AdapterMixture]:
        return self._mixtures.get(mixture_id)

    def list_mixtures(self) -> list[AdapterMixture]:
        with self._lock:
            return sorted(self._mixtures.values(), key=lambda m: m.id)

    # -- snapshot ---------------------------------------------------------------

    def export(self) -> dict:
        with self._lock:
            return {
                "base_models": [
                    {
                        "id": m.id,
                        "family": m.family,
                        "parameter_count": m.parameter_count,
                        "precision": m.precision,
                        "prompt_template_id": m.prompt_template_id,
                    }
                    for m in self.list_base_models()
                ],
                "adapters": [
                    {
                        "id": a.id,
                        "base_model_id": a.base_model_id,
                        "artifact_uri": a.artifact_uri,
                        "targets": sorted(a.targets),
                        "rank": a.rank,
                        "visibility": a.visibility,
                        "owner_project": a.owner_project,
                    }
                    for a in self.list_all_adapters()
                ],
                "mixtures": [
                    {
                        "id": m.id,
                        "components": [
                            {"adapter_id": a, "weight": w} for a, w in m.components
                        ],
                        "base_model_id": m.base_model_id,
                    }
                    for m in self.list_mixtures()
                ],
            }

    def load(self, doc: dict) -> None:
        with self._lock:
            for m in doc.get("base_models", []):
                self._base_models[m["id"]] = BaseModel(
                    id=m["id"],
                    family=m["family"],
                    parameter_count=m["parameter_count"],
                    precision=m["precision"],
                    prompt_template_id=m.get("prompt_template_id", "default"),
                )
            for a in doc.get("adapters", []):
                self._adapters[a["id"]] = Adapter(
                    id=a["id"],
                    base_model_id=a["base_model_id"],
                    artifact_uri=a["artifact_uri"],
                    targets=frozenset(a["targets"]),
                    rank=a["rank"],
                    visibility=a["visibility"],
                    owner_project=a.get("owner_project"),
                )
            for m in doc.get("mixtures", []):
                self._mixtures[m["id"]] = AdapterMixture(
                    id=m["id"],
                    components=tuple((c["adapter_id"], c["weight"]) for c in m["components"]),
                    base_model_id=m["base_model_id"],
                )
