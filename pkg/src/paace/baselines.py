"""Reference context strategies for head-to-head comparison.

All baselines preserve the system prompt and plan text byte-for-byte and only
reduce the state components (input, history, observations, retrieved), so
accuracy deltas against the plan-aware compressors are attributable to how
interaction state is handled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .backends import BackendError, CompletionBackend, CompletionRequest, EmbeddingBackend
from .model import ContextState

DEFAULT_PROMPTING_INSTRUCTION = (
    "Summarize the interaction history and observations below. "
    "Keep every step number and its resolved value exact; drop everything else."
)


@dataclass(frozen=True)
class BaselineConfig:
    fifo_turns: int = 2
    retrieval_top_m: int = 6
    prompting_instruction: str = DEFAULT_PROMPTING_INSTRUCTION
    extractive_keep_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.fifo_turns < 1 or self.retrieval_top_m < 1:
            raise ValueError("fifo_turns and retrieval_top_m must be >= 1")
        if not 0.0 < self.extractive_keep_fraction < 1.0:
            raise ValueError("extractive_keep_fraction must be in (0,1)")


def fifo_compress(c: ContextState, turns: int) -> ContextState:
    """Keep the most recent `turns` history/observation entries, drop older.

    The initial input is the task statement rather than an interaction, so it
    stays regardless of the window.
    """
    if turns < 1:
        raise ValueError("turns must be >= 1")
    return c.with_entries(
        history=c.history[-turns:],
        observations=c.observations[-turns:],
    )


def retrieval_compress(
    c: ContextState, query: str, embedder: EmbeddingBackend, top_m: int
) -> ContextState:
    """Keep the top_m history/observation entries most similar to the query.

    Entries are ranked jointly by cosine similarity to the query embedding;
    ties and zero-vector entries fall back to recency (newer wins). Surviving
    entries keep their original order and section.
    """
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    entries = list(c.history) + list(c.observations)
    if len(entries) <= top_m:
        return c
    vectors = embedder.embed([query] + entries)
    q = vectors[0]
    scores = []
    for i, entry_vec in enumerate(vectors[1:]):
        denom = float((q @ q) ** 0.5 * (entry_vec @ entry_vec) ** 0.5)
        score = float(q @ entry_vec) / denom if denom > 0 else -1.0
        scores.append((score, i))
    keep = {i for _, i in sorted(scores, key=lambda p: (-p[0], -p[1]))[:top_m]}
    n_hist = len(c.history)
    return c.with_entries(
        history=tuple(e for i, e in enumerate(c.history) if i in keep),
        observations=tuple(
            e for i, e in enumerate(c.observations) if (i + n_hist) in keep
        ),
    )


def prompting_compress(
    c: ContextState, backend: CompletionBackend, instruction: str
) -> ContextState:
    """Replace history and observations with one model-written summary.

    Backend failures propagate as BackendError; the executor adapter treats
    that as a failed compression (uncompressed fallback, run flagged).
    """
    body = "\n".join(list(c.history) + list(c.observations))
    response = backend.complete(CompletionRequest(system=instruction, user=body))
    summary = response.text.strip()
    return c.with_entries(
        history=(summary,) if summary else (),
        observations=(),
    )


def _sentence_units(c: ContextState) -> list[tuple[str, int, str]]:
    """State text as (section, index, sentence) units; plan/system excluded."""
    units = []
    for i, line in enumerate(c.initial_input.splitlines()):
        if line.strip():
            units.append(("initial_input", i, line))
    for section in ("history", "observations", "retrieved", "memory"):
        for i, entry in enumerate(getattr(c, section)):
            units.append((section, i, entry))
    return units


def extractive_compress(c: ContextState, slice_text: str, keep_fraction: float) -> ContextState:
    """Delete the state sentences with least token overlap with the slice.

    Purely deletional: surviving sentences are byte-identical and keep their
    original order. No dependency reasoning happens, which is exactly the
    failure mode this baseline exists to demonstrate.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0,1]")
    units = _sentence_units(c)
    if not units:
        return c
    slice_tokens = set(slice_text.lower().split())
    scored = []
    for rank, (section, i, text) in enumerate(units):
        overlap = len(set(text.lower().split()) & slice_tokens)
        scored.append((overlap, -rank, (section, i)))
    m = math.ceil(keep_fraction * len(units))
    kept = {key for _, _, key in sorted(scored, reverse=True)[:m]}

    input_lines = [
        line for i, line in enumerate(c.initial_input.splitlines())
        if line.strip() and ("initial_input", i) in kept
    ]
    sections = {
        name: tuple(
            e for i, e in enumerate(getattr(c, name)) if (name, i) in kept
        )
        for name in ("history", "observations", "retrieved", "memory")
    }
    return c.with_entries(initial_input="\n".join(input_lines), **sections)


@dataclass
class BaselineCompressor:
    """Adapter exposing a baseline strategy through the compressor interface."""

    name: str
    config: BaselineConfig
    embedder: EmbeddingBackend | None = None
    backend: CompletionBackend | None = None
    prompt_id: str = ""

    def __post_init__(self) -> None:
        if not self.prompt_id:
            self.prompt_id = f"baseline:{self.name}"

    def compress(self, state: ContextState, slice_text: str) -> ContextState | None:
        if self.name == "fifo":
            return fifo_compress(state, self.config.fifo_turns)
        if self.name == "retrieval":
            if self.embedder is None:
                raise ValueError("retrieval baseline needs an embedder")
            return retrieval_compress(state, slice_text, self.embedder, self.config.retrieval_top_m)
        if self.name == "prompting":
            if self.backend is None:
                raise ValueError("prompting baseline needs a completion backend")
            try:
                return prompting_compress(state, self.backend, self.config.prompting_instruction)
            except BackendError:
                return None
        if self.name == "extractive":
            return extractive_compress(state, slice_text, self.config.extractive_keep_fraction)
        raise ValueError(f"unknown baseline {self.name!r}")
