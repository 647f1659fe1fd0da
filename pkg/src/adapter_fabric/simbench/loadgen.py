"""Closed-loop load generation and latency reporting.

A fixed pool of workers each waits for one response before sending the
next request, so throughput emerges from latency. Adapter and prompt
selection is drawn from per-worker seeded streams, making the request mix
reproducible run to run. Percentiles use the nearest-rank definition.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

from ..errors import FabricError

import random


@dataclass(frozen=True)
class LoadScenario:
    duration_s: float
    workers: int
    adapter_pool: tuple[str, ...]
    prompt_corpus: tuple[str, ...]
    seed: int
    total_requests: Optional[int] = None  # fixed-count mode overrides duration
    temperature: float = 0.5
    max_tokens: int = 64

    def fingerprint(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "workers": self.workers,
            "adapter_pool": list(self.adapter_pool),
            "prompt_count": len(self.prompt_corpus),
            "seed": self.seed,
            "total_requests": self.total_requests,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    @staticmethod
    def from_json(doc: dict) -> "LoadScenario":
        return LoadScenario(
            duration_s=float(doc.get("duration_s", 10.0)),
            workers=int(doc.get("workers", 38)),
            adapter_pool=tuple(doc["adapter_pool"]),
            prompt_corpus=tuple(doc["prompt_corpus"]),
            seed=int(doc.get("seed", 0)),
            total_requests=doc.get("total_requests"),
            temperature=float(doc.get("temperature", 0.5)),
            max_tokens=int(doc.get("max_tokens", 64)),
        )


def nearest_rank(sorted_values: list[float], percentile: float) -> float:
    """Smallest sample at or above the target rank; sorted input required."""
    if not sorted_values:
        return 0.0
    rank = math.ceil(percentile / 100.0 * len(sorted_values))
    return sorted_values[max(0, rank - 1)]


@dataclass(frozen=True)
class MetricsReport:
    achieved_rps: float
    latency_ms: dict  # mean, p50, p95, p99
    error_rate: float
    per_adapter_counts: dict
    total_requests: int
    duration_s: float
    fingerprint: dict = field(default_factory=dict)
    samples: tuple[float, ...] = ()  # raw per-request latencies, not serialized

    def to_json(self) -> dict:
        return {
            "achieved_rps": self.achieved_rps,
            "latency_ms": self.latency_ms,
            "error_rate": self.error_rate,
            "per_adapter_counts": self.per_adapter_counts,
            "total_requests": self.total_requests,
            "duration_s": self.duration_s,
            "fingerprint": self.fingerprint,
        }

    @staticmethod
    def from_json(doc: dict) -> "MetricsReport":
        return MetricsReport(
            achieved_rps=doc["achieved_rps"],
            latency_ms=doc["latency_ms"],
            error_rate=doc["error_rate"],
            per_adapter_counts=doc["per_adapter_counts"],
            total_requests=doc["total_requests"],
            duration_s=doc["duration_s"],
            fingerprint=doc.get("fingerprint", {}),
        )

    def summary_text(self) -> str:
        lines = [
            f"requests: {self.total_requests}  errors: {self.error_rate:.4f}  "
            f"rps: {self.achieved_rps:.1f}  duration: {self.duration_s:.1f}s",
            "latency ms  mean {mean:.2f}  p50 {p50:.2f}  p95 {p95:.2f}  p99 {p99:.2f}".format(
                **self.latency_ms
            ),
            "per-adapter counts:",
        ]
        for adapter, count in sorted(self.per_adapter_counts.items()):
            lines.append(f"  {adapter}: {count}")
        return "\n".join(lines)


class GatewayTarget:
    """Sends OpenAI-shaped chat requests through the gateway."""

    kind = "gateway"

    def __init__(self, base_url: str, token: str):
        self.base_url = base_url.rstrip("/")
        self.token = token

    def health_url(self) -> str:
        return self.base_url + "/healthz"

    def build(self, adapter_id: str, prompt: str, scenario: LoadScenario) -> tuple[str, dict, dict]:
        body = {
            "model": adapter_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": scenario.temperature,
            "max_tokens": scenario.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.token}"}
        return self.base_url + "/v1/chat/completions", body, headers


class DirectTarget:
    """Bypasses the gateway: regenerates wire bodies straight to one backend."""

    kind = "direct"

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def health_url(self) -> str:
        return self.base_url + "/healthz"

    def build(self, adapter_id: str, prompt: str, scenario: LoadScenario) -> tuple[str, dict, dict]:
        body = {
            "inputs": f"[INST] {prompt} [/INST]",
            "parameters": {
                "temperature": scenario.temperature,
                "max_new_tokens": scenario.max_tokens,
                "adapter_id": adapter_id,
                "adapter_source": "local",
            },
        }
        return self.base_url + "/generate", body, {}


async def run_load(scenario: LoadScenario, target) -> MetricsReport:
    import aiohttp

    latencies: list[float] = []
    per_adapter: dict[str, int] = {}
    errors = 0
    sent = 0
    lock = asyncio.Lock()

    connector = aiohttp.TCPConnector(limit=0)
    timeout = aiohttp.ClientTimeout(total=60)
    async with aiohttp.ClientSession(connector=connector, timeout=timeout) as session:
        try:
            async with session.get(target.health_url()) as resp:
                if resp.status != 200:
                    raise FabricError("TARGET_UNREACHABLE", f"health check HTTP {resp.status}")
        except aiohttp.ClientError as exc:
            raise FabricError("TARGET_UNREACHABLE", str(exc)) from exc

        started = time.perf_counter()
        deadline = started + scenario.duration_s

        async def worker(index: int):
            nonlocal errors, sent
            rng = random.Random(scenario.seed * 10007 + index)
            while True:
                if scenario.total_requests is not None:
                    async with lock:
                        if sent >= scenario.total_requests:
                            return
                        sent += 1
                elif time.perf_counter() >= deadline:
                    return
                adapter_id = rng.choice(scenario.adapter_pool)
                prompt = rng.choice(scenario.prompt_corpus)
                url, body, headers = target.build(adapter_id, prompt, scenario)
                t0 = time.perf_counter()
                ok = False
                try:
                    async with session.post(url, json=body, headers=headers) as resp:
                        await resp.read()
                        ok = resp.status == 200
                except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
                    ok = False
                elapsed_ms = (time.perf_counter() - t0) * 1000.0
                async with lock:
                    if ok:
                        latencies.append(elapsed_ms)
                        per_adapter[adapter_id] = per_adapter.get(adapter_id, 0) + 1
                    else:
                        errors += 1

        await asyncio.gather(*(worker(i) for i in range(scenario.workers)))
        wall = time.perf_counter() - started

    completed = len(latencies)
    total = completed + errors
    ordered = sorted(latencies)
    latency_ms = {
        "mean": sum(ordered) / completed if completed else 0.0,
        "p50": nearest_rank(ordered, 50),
        "p95": nearest_rank(ordered, 95),
        "p99": nearest_rank(ordered, 99),
    }
    return MetricsReport(
        achieved_rps=completed / wall if wall > 0 else 0.0,
        latency_ms=latency_ms,
        error_rate=errors / total if total else 0.0,
        per_adapter_counts=per_adapter,
        total_requests=total,
        duration_s=wall,
        fingerprint=scenario.fingerprint(),
        samples=tuple(latencies),
    )


def run_load_sync(scenario: LoadScenario, target) -> MetricsReport:
    return asyncio.run(run_load(scenario, target))


def gateway_overhead(direct: MetricsReport, via_gateway: MetricsReport) -> dict:
    """Per-percentile latency difference (gateway minus direct); may be negative."""
    if direct.fingerprint != via_gateway.fingerprint:
        raise FabricError("SCENARIO_MISMATCH", "reports come from different scenarios")
    return {
        name: via_gateway.latency_ms[name] - direct.latency_ms[name]
        for name in ("mean", "p50", "p95", "p99")
    }


def latencies_to_csv(report: MetricsReport) -> str:
    """Raw per-request samples (request order) for external plotting."""
    lines = ["request_index,latency_ms"]
    for i, value in enumerate(report.samples):
        lines.append(f"{i},{value}")
    return "\n".join(lines) + "\n"


def dump_report(report: MetricsReport, path: Optional[str] = None) -> str:
    text = json.dumps(report.to_json(), indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text
