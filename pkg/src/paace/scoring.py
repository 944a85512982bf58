"""Outcome filters deciding which compressed trajectories count as successful.

A compressed run passes only if the whole conjunction holds: final answers
semantically equivalent above threshold, every per-step compression strictly
inside (0,1), no empty compressions, and the judge not calling the compressed
answer strictly worse. Each filter can be switched off individually to measure
how much bad supervision it was catching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import EmbeddingBackend
from .model import TrajectoryPair

LOW_EQUIVALENCE = "low_equivalence"
DEGENERATE_RATIO = "degenerate_ratio"
EMPTY_COMPRESSION = "empty_compression"
JUDGE_WORSE = "judge_worse"
TRUNCATED = "truncated"

FAILURE_REASONS = (
    LOW_EQUIVALENCE,
    DEGENERATE_RATIO,
    EMPTY_COMPRESSION,
    JUDGE_WORSE,
    TRUNCATED,
)


@dataclass(frozen=True)
class Thresholds:
    """Filter configuration; the switches exist for ablation runs."""

    theta: float = 0.85
    equivalence_filter: bool = True
    judge_filter: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0,1], got {self.theta}")


@dataclass(frozen=True)
class SuccessLabel:
    success: bool
    equivalence_s: float
    judge: str
    per_step_ratios: tuple[float, ...]
    failure_reasons: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_step_ratios", tuple(self.per_step_ratios))
        object.__setattr__(self, "failure_reasons", frozenset(self.failure_reasons))
        unknown = self.failure_reasons - set(FAILURE_REASONS)
        if unknown:
            raise ValueError(f"unknown failure reasons {sorted(unknown)}")
        if self.success != (not self.failure_reasons):
            raise ValueError("success must hold exactly when failure_reasons is empty")


class Judge:
    """Anything with verdict(full, compressed, description) -> better|equal|worse."""

    def verdict(self, full_answer: str, compressed_answer: str, description: str) -> str:
        raise NotImplementedError


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v) / (nu * nv)


def semantic_equivalence(y_full: str, y_comp: str, embedder: EmbeddingBackend) -> float:
    vectors = embedder.embed([y_full, y_comp])
    return cosine(vectors[0], vectors[1])


def label_trajectory(
    pair: TrajectoryPair,
    thresholds: Thresholds,
    judge,
    embedder: EmbeddingBackend,
) -> SuccessLabel:
    reasons: set[str] = set()
    ratios = tuple(rec.ratio for rec in pair.records)

    if pair.full.truncated or pair.compressed.truncated:
        reasons.add(TRUNCATED)

    if not pair.records or pair.compressed.poisoned:
        reasons.add(EMPTY_COMPRESSION)
    for rec in pair.records:
        if rec.compressed_empty:
            reasons.add(EMPTY_COMPRESSION)
        elif not 0.0 < rec.ratio < 1.0:
            reasons.add(DEGENERATE_RATIO)

    y_full, y_comp = pair.full.final_answer, pair.compressed.final_answer
    if not y_full.strip() or not y_comp.strip():
        s = 0.0
        reasons.add(LOW_EQUIVALENCE)
    else:
        s = semantic_equivalence(y_full, y_comp, embedder)
        if thresholds.equivalence_filter and s < thresholds.theta:
            reasons.add(LOW_EQUIVALENCE)

    verdict = judge.verdict(y_full, y_comp, pair.workflow_desc)
    if thresholds.judge_filter and verdict == "worse":
        reasons.add(JUDGE_WORSE)

    return SuccessLabel(
        success=not reasons,
        equivalence_s=s,
        judge=verdict,
        per_step_ratios=ratios,
        failure_reasons=frozenset(reasons),
    )
