"""Mixture-of-adapters weight search on the probability simplex.

Coordinate ascent with a fixed candidate grid per coordinate and
proportional redistribution of the remaining mass; when a full cycle
brings no improvement, restart from a uniform-Dirichlet sample. Every
evaluation is recorded, so runs are reproducible given (scorer, seed).
Also computes comparison rows (base vs mixed) and relative-improvement
summaries over them.
"""

from __future__ import annotations

import argparse
import csv
import json
import random
from dataclasses import dataclass
from typing import Protocol, Sequence

from .errors import FabricError

COORDINATE_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
SIMPLEX_TOL = 1e-9


class Scorer(Protocol):
    """Deterministic evaluation of a weighting; same inputs, same score."""

    def score(self, weights: dict[str, float], seed: int) -> float: ...

    def score_base(self, seed: int) -> float: ...


@dataclass(frozen=True)
class SyntheticScorer:
    """score(w) = 1 - ||w - target||^2 over a fixed adapter order."""

    adapter_ids: tuple[str, ...]
    target: tuple[float, ...]

    def score(self, weights: dict[str, float], seed: int) -> float:
        vector = [weights.get(a, 0.0) for a in self.adapter_ids]
        return 1.0 - sum((v - t) ** 2 for v, t in zip(vector, self.target))

    def score_base(self, seed: int) -> float:
        # The no-adapter point: every component at zero.
        return 1.0 - sum(t * t for t in self.target)


@dataclass(frozen=True)
class OptimizationReport:
    adapter_ids: tuple[str, ...]
    best_weights: dict[str, float]
    best_score: float
    evaluations: int
    trajectory: tuple[tuple[dict[str, float], float], ...]
    seed: int

    def to_json(self) -> dict:
        return {
            "adapter_ids": list(self.adapter_ids),
            "best_weights": self.best_weights,
            "best_score": self.best_score,
            "evaluations": self.evaluations,
            "trajectory": [{"weights": w, "score": s} for w, s in self.trajectory],
            "seed": self.seed,
        }


def _redistributed(weights: tuple[float, ...], index: int, value: float) -> tuple[float, ...]:
    """Pin one coordinate and share the remaining mass proportionally."""
    n = len(weights)
    rest = 1.0 - value
    others = sum(weights) - weights[index]
    out = [0.0] * n
    out[index] = value
    for j in range(n):
        if j == index:
            continue
        if others > 0:
            out[j] = rest * weights[j] / others
        else:
            out[j] = rest / (n - 1)
    return tuple(out)


def _dirichlet_uniform(rng: random.Random, n: int) -> tuple[float, ...]:
    draws = [rng.expovariate(1.0) for _ in range(n)]
    total = sum(draws)
    return tuple(d / total for d in draws)


class _BudgetExhausted(Exception):
    pass


def optimize(adapter_ids: Sequence[str], scorer: Scorer, budget: int, seed: int) -> OptimizationReport:
    ids = tuple(adapter_ids)
    n = len(ids)
    if n < 1:
        raise FabricError("INVALID_REQUEST", "need at least one adapter")
    if budget < n:
        raise FabricError("BUDGET_TOO_SMALL", f"budget {budget} < adapter count {n}")

    trajectory: list[tuple[dict[str, float], float]] = []
    best_weights: tuple[float, ...] = ()
    best_score = float("-inf")
    evaluations = 0

    def evaluate(weights: tuple[float, ...]) -> float:
        nonlocal evaluations, best_weights, best_score
        if evaluations >= budget:
            raise _BudgetExhausted()
        value = scorer.score(dict(zip(ids, weights)), seed)
        evaluations += 1
        trajectory.append((dict(zip(ids, weights)), value))
        if value > best_score:
            best_score = value
            best_weights = weights
        return value

    rng = random.Random(seed)
    current = tuple(1.0 / n for _ in range(n))
    try:
        current_score = evaluate(current)
        if n > 1:
            while True:
                improved = False
                for i in range(n):
                    step_best: tuple[float, ...] | None = None
                    step_best_score = current_score
                    for value in COORDINATE_GRID:
                        candidate = _redistributed(current, i, value)
                        candidate_score = evaluate(candidate)
                        if candidate_score > step_best_score:
                            step_best = candidate
                            step_best_score = candidate_score
                    if step_best is not None:
                        current, current_score = step_best, step_best_score
                        improved = True
                if not improved:
                    current = _dirichlet_uniform(rng, n)
                    current_score = evaluate(current)
    except _BudgetExhausted:
        pass

    return OptimizationReport(
        adapter_ids=ids,
        best_weights=dict(zip(ids, best_weights)),
        best_score=best_score,
        evaluations=evaluations,
        trajectory=tuple(trajectory),
        seed=seed,
    )


# -- comparison and improvement reporting -------------------------------------


@dataclass(frozen=True)
class ScoreRow:
    model_name: str
    base_score: float  # percentage, 0..100
    mixed_score: float  # percentage, 0..100


def evaluate_comparison(scorer: Scorer, weights: dict[str, float], seed: int = 0) -> tuple[float, float]:
    """(base score with no adapters, score with the given weights), same seed."""
    return scorer.score_base(seed), scorer.score(weights, seed)


def improvement_report(rows: Sequence[ScoreRow]) -> tuple[list[float], float]:
    """Per-row relative improvement percentages and their arithmetic mean."""
    if not rows:
        raise FabricError("INVALID_REQUEST", "need at least one row")
    per_row: list[float] = []
    for row in rows:
        if row.base_score <= 0:
            raise FabricError("ZERO_BASE_SCORE", f"{row.model_name}: base score must be > 0")
        per_row.append((row.mixed_score / row.base_score - 1.0) * 100.0)
    return per_row, sum(per_row) / len(per_row)


# -- CLI ----------------------------------------------------------------------


def _parse_scorer(spec: str, adapter_ids: tuple[str, ...]) -> Scorer:
    kind, _, rest = spec.partition(":")
    if kind == "synthetic":
        prefix = "w*="
        if not rest.startswith(prefix):
            raise SystemExit(f"synthetic scorer spec must look like synthetic:{prefix}0.5,0.25,0.25")
        target = tuple(float(x) for x in rest[len(prefix) :].split(","))
        if len(target) != len(adapter_ids):
            raise SystemExit("scorer target length must match --adapters")
        return SyntheticScorer(adapter_ids=adapter_ids, target=target)
    raise SystemExit(f"unknown scorer kind {kind!r}")


def cmd_optimize(args) -> int:
    ids = tuple(x for x in args.adapters.split(",") if x)
    scorer = _parse_scorer(args.scorer, ids)
    report = optimize(ids, scorer, budget=args.budget, seed=args.seed)
    doc = report.to_json()
    if not args.trajectory:
        doc.pop("trajectory")
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    rows: list[ScoreRow] = []
    with open(args.rows, newline="", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                ScoreRow(
                    model_name=record["model_name"],
                    base_score=float(record["base_score"]),
                    mixed_score=float(record["mixed_score"]),
                )
            )
    per_row, mean = improvement_report(rows)
    print(
        json.dumps(
            {
                "rows": [
                    {"model_name": r.model_name, "improvement_pct": p}
                    for r, p in zip(rows, per_row)
                ],
                "mean_improvement_pct": mean,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="search adapter weights against a scorer")
    p_opt.add_argument("--adapters", required=True, help="comma-separated adapter ids")
    p_opt.add_argument("--budget", type=int, default=500)
    p_opt.add_argument("--seed", type=int, default=0)
    p_opt.add_argument("--scorer", required=True, help="e.g. synthetic:w*=0.5,0.25,0.25")
    p_opt.add_argument("--trajectory", action="store_true", help="include every evaluation")
    p_opt.set_defaults(func=cmd_optimize)

    p_rep = sub.add_parser("report", help="relative improvements from a CSV of score rows")
    p_rep.add_argument("--rows", required=True, help="CSV: model_name, base_score, mixed_score")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
