"""Core domain types: workflows, plans, context states, trajectories.

All types are immutable value objects; construction validates invariants and
raises ``ValueError`` on violation. Token accounting is word-based by default
and pluggable via any ``Callable[[str], int]``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from typing import Callable

TokenCounter = Callable[[str], int]

STEP_KINDS = (
    "lookup",
    "arithmetic",
    "file_op",
    "table_op",
    "search",
    "extract",
    "aggregate",
    "answer",
)

# Rendered context sections, in the order they always appear.
SECTION_ORDER = (
    "SYSTEM",
    "PLAN",
    "INPUT",
    "MEMORY",
    "HISTORY",
    "OBSERVATIONS",
    "RETRIEVED",
)

_SECTION_RE = re.compile(r"^## (SYSTEM|PLAN|INPUT|MEMORY|HISTORY|OBSERVATIONS|RETRIEVED)$")


def token_count(text: str) -> int:
    """Count whitespace-delimited words. Deterministic and model-free."""
    return len(text.split())


def _flatten(text: str) -> str:
    """Collapse a possibly multi-line entry to a single line."""
    return " | ".join(part for part in text.splitlines() if part.strip()) or text.strip()


@dataclass(frozen=True)
class TaskStep:
    """One plan task: 1-based id, instruction text, dependencies on earlier steps."""

    id: int
    instruction: str
    depends_on: frozenset[int] = frozenset()
    kind: str = "lookup"

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValueError(f"step id must be >= 1, got {self.id}")
        if not self.instruction.strip():
            raise ValueError(f"step {self.id}: instruction must be non-empty")
        if self.kind not in STEP_KINDS:
            raise ValueError(f"step {self.id}: unknown kind {self.kind!r}")
        bad = [d for d in self.depends_on if not (1 <= d < self.id)]
        if bad:
            raise ValueError(f"step {self.id}: depends_on must reference earlier steps, got {sorted(bad)}")
        object.__setattr__(self, "depends_on", frozenset(self.depends_on))


@dataclass(frozen=True)
class Plan:
    """Ordered task list with contiguous 1..n ids; dependency edges form a DAG."""

    steps: tuple[TaskStep, ...]
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("plan must contain at least one step")
        ids = [s.id for s in self.steps]
        if ids != list(range(1, len(self.steps) + 1)):
            raise ValueError(f"step ids must be contiguous 1..n, got {ids}")
        # depends_on ⊂ {1..id-1} is enforced per-step, which already rules out
        # cycles; we re-check here so a hand-built Plan cannot sneak one in.
        for s in self.steps:
            if any(d >= s.id for d in s.depends_on):
                raise ValueError(f"dependency cycle or forward edge at step {s.id}")
        if not self.description:
            object.__setattr__(self, "description", render_plan(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def step(self, t: int) -> TaskStep:
        if not 1 <= t <= len(self.steps):
            raise ValueError(f"step index {t} out of range 1..{len(self.steps)}")
        return self.steps[t - 1]


def render_plan(steps: tuple[TaskStep, ...] | list[TaskStep]) -> str:
    lines = []
    for s in steps:
        after = f" (after: {','.join(str(d) for d in sorted(s.depends_on))})" if s.depends_on else ""
        lines.append(f"Step {s.id} [{s.kind}]: {s.instruction}{after}")
    return "\n".join(lines)


@dataclass(frozen=True)
class Workflow:
    """A sampled long-horizon task with a noisy initial input and a final requirement."""

    id: str
    initial_input: str
    system_prompt: str
    plan: Plan
    final_requirement: str
    seed: int
    gold_answer: str | None = None

    def describe(self, include_gold: bool = True) -> str:
        """Workflow description shown to judge backends."""
        parts = [f"Workflow {self.id}: {self.final_requirement}",
                 f"Plan has {len(self.plan)} steps."]
        if include_gold and self.gold_answer is not None:
            parts.append(f"GOLD: {self.gold_answer}")
        return "\n".join(parts)


@dataclass(frozen=True)
class ContextState:
    """The agent's step-t context: {I0, P, plan, history, observations, retrieved, memory}."""

    initial_input: str = ""
    system_prompt: str = ""
    plan_text: str = ""
    history: tuple[str, ...] = ()
    observations: tuple[str, ...] = ()
    retrieved: tuple[str, ...] = ()
    memory: tuple[str, ...] = ()
    step: int = 1

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        for name in ("history", "observations", "retrieved", "memory"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def with_entries(self, **kwargs) -> ContextState:
        return replace(self, **kwargs)


def render_context(c: ContextState) -> str:
    """Render a context to the prompt text the agent sees.

    Sections appear in fixed order and every header is always present, so the
    rendering is parseable and injective up to section delimiters. Entries are
    flattened to single lines.
    """
    blocks = []
    body = {
        "SYSTEM": c.system_prompt,
        "PLAN": c.plan_text,
        "INPUT": c.initial_input,
        "MEMORY": "\n".join(_flatten(e) for e in c.memory),
        "HISTORY": "\n".join(_flatten(e) for e in c.history),
        "OBSERVATIONS": "\n".join(_flatten(e) for e in c.observations),
        "RETRIEVED": "\n".join(_flatten(e) for e in c.retrieved),
    }
    for name in SECTION_ORDER:
        text = body[name].rstrip()
        blocks.append(f"## {name}\n{text}" if text else f"## {name}")
    return "\n".join(blocks)


def parse_context(text: str, step: int = 1) -> ContextState:
    """Parse a rendered context back into a ContextState.

    Lenient: content before the first known header, or under unknown headers,
    is collected into ``memory`` so model-generated compressions degrade
    gracefully instead of erroring.
    """
    sections: dict[str, list[str]] = {name: [] for name in SECTION_ORDER}
    stray: list[str] = []
    current: list[str] | None = None
    for line in text.splitlines():
        m = _SECTION_RE.match(line.strip())
        if m:
            current = sections[m.group(1)]
            continue
        if line.strip().startswith("## "):
            current = stray  # unknown header: treat its body as stray notes
            continue
        (current if current is not None else stray).append(line)

    def joined(name: str) -> str:
        return "\n".join(sections[name]).strip()

    def entries(name: str) -> tuple[str, ...]:
        return tuple(ln.strip() for ln in sections[name] if ln.strip())

    memory = entries("MEMORY")
    stray_text = " | ".join(ln.strip() for ln in stray if ln.strip())
    if stray_text:
        memory = memory + (stray_text,)
    return ContextState(
        initial_input=joined("INPUT"),
        system_prompt=joined("SYSTEM"),
        plan_text=joined("PLAN"),
        history=entries("HISTORY"),
        observations=entries("OBSERVATIONS"),
        retrieved=entries("RETRIEVED"),
        memory=memory,
        step=step,
    )


def context_tokens(c: ContextState, counter: TokenCounter = token_count) -> int:
    return counter(render_context(c))


def context_digest(c: ContextState) -> str:
    return hashlib.sha256(render_context(c).encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class ToolResult:
    payload: str
    tokens: int = 0

    def __post_init__(self) -> None:
        if self.tokens == 0:
            object.__setattr__(self, "tokens", token_count(self.payload))


@dataclass(frozen=True)
class StepRecord:
    """Per-step trajectory bookkeeping: what the agent saw and did at step t."""

    step: int
    context_tokens: int
    digest: str
    agent_output: str
    tool_results: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.context_tokens <= 0:
            raise ValueError(f"step {self.step}: context_tokens must be > 0")
        object.__setattr__(self, "tool_results", tuple(self.tool_results))


@dataclass(frozen=True)
class CompressionRecord:
    """One compression event: sizes, ratio, the plan slice it conditioned on.

    Carries the rendered before/after context texts as well, because the
    supervision extractor needs them verbatim to build training tuples.
    """

    step: int
    k: int
    plan_slice: str
    original_tokens: int
    compressed_tokens: int
    ratio: float
    prompt_id: str
    compressed_empty: bool = False
    context_text: str = ""
    target_text: str = ""

    @property
    def valid(self) -> bool:
        # Degenerate compressions (empty, or not strictly smaller) are invalid.
        return (not self.compressed_empty) and 0.0 < self.ratio < 1.0


def make_compression_record(
    step: int,
    k: int,
    plan_slice: str,
    original_tokens: int,
    compressed_tokens: int,
    prompt_id: str,
    compressed_empty: bool = False,
    context_text: str = "",
    target_text: str = "",
) -> CompressionRecord:
    if original_tokens <= 0:
        raise ValueError("original_tokens must be > 0")
    return CompressionRecord(
        step=step,
        k=k,
        plan_slice=plan_slice,
        original_tokens=original_tokens,
        compressed_tokens=compressed_tokens,
        ratio=compressed_tokens / original_tokens,
        prompt_id=prompt_id,
        compressed_empty=compressed_empty,
        context_text=context_text,
        target_text=target_text,
    )


@dataclass(frozen=True)
class Trajectory:
    """One executed run of a workflow under a context strategy."""

    workflow_id: str
    mode: str  # "full" | "compressed" | "baseline:<name>"
    per_step: tuple[StepRecord, ...]
    final_answer: str
    compression_records: tuple[CompressionRecord, ...] = ()
    truncated: bool = False
    poisoned: bool = False  # degenerate compression fallback happened mid-run

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_step", tuple(self.per_step))
        object.__setattr__(self, "compression_records", tuple(self.compression_records))

    @property
    def steps(self) -> int:
        return len(self.per_step)

    def context_token_series(self) -> list[int]:
        return [r.context_tokens for r in self.per_step]


@dataclass(frozen=True)
class TrajectoryPair:
    """A full-context trajectory and its compressed counterpart for one workflow."""

    workflow_id: str
    workflow_desc: str
    gold_answer: str | None
    full: Trajectory
    compressed: Trajectory

    @property
    def records(self) -> tuple[CompressionRecord, ...]:
        return self.compressed.compression_records


@dataclass(frozen=True)
class RunConfig:
    """Execution knobs: lookahead k plus runaway guards."""

    k: int = 2
    step_budget_factor: int = 2
    token_budget: int = 1_000_000_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.step_budget_factor <= 0 or self.token_budget <= 0:
            raise ValueError("guards must be > 0")
