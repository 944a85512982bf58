"""Workflow execution under full, compressed, and baseline context regimes.

The compressed regime implements persistent next-k compression: at every step
the compressor maps C_t to a smaller context conditioned on the next k plan
tasks, the agent acts on the compressed context, and the next state is built
on top of it, so whatever the compressor drops stays dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Protocol

from .backends import (
    CompletionBackend,
    CompletionRequest,
    FACT_RE,
    _parse_task_lines,
    _quoted,
    _dep_ids,
    resolved_values,
)
from .model import (
    ContextState,
    Plan,
    RunConfig,
    StepRecord,
    TaskStep,
    ToolResult,
    Trajectory,
    TrajectoryPair,
    Workflow,
    context_digest,
    context_tokens,
    make_compression_record,
    parse_context,
    render_context,
    render_plan,
    token_count,
)
from .synth import ToolCall, WorldState, apply_tool

CURRENT_TASK_HEADER = "## CURRENT TASK"
FINAL_HEADER = "## FINAL"
NEXT_TASKS_HEADER = "## NEXT_TASKS"
CONTEXT_HEADER = "## CONTEXT"


def plan_slice(plan: Plan, t: int, k: int) -> str:
    """Render the k upcoming tasks starting at the current one.

    Dependency annotations are restricted to ids inside the slice; the
    instruction text still names any out-of-slice dependencies, which is what
    compressors key on.
    """
    if not 1 <= t <= len(plan):
        raise ValueError(f"step index {t} out of range 1..{len(plan)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    window = plan.steps[t - 1 : min(t + k - 1, len(plan))]
    ids = {s.id for s in window}
    restricted = [replace(s, depends_on=frozenset(s.depends_on & ids)) for s in window]
    return render_plan(restricted)


def build_compression_input(slice_text: str, context_text: str) -> str:
    """The exact byte layout compressor backends (and the student) consume."""
    return f"{NEXT_TASKS_HEADER}\n{slice_text}\n{CONTEXT_HEADER}\n{context_text}"


def update_context(
    c: ContextState, agent_output: str, tool_results: list[ToolResult]
) -> ContextState:
    """Append the step's output and tool payloads; everything else unchanged."""
    return c.with_entries(
        history=c.history + (agent_output,),
        observations=c.observations + tuple(r.payload for r in tool_results),
        step=c.step + 1,
    )


class Compressor(Protocol):
    name: str
    prompt_id: str

    def compress(self, state: ContextState, slice_text: str) -> ContextState | None: ...


@dataclass
class IdentityCompressor:
    """Returns the context unchanged; turns run_compressed into run_full."""

    name: str = "identity"
    prompt_id: str = "identity"

    def compress(self, state: ContextState, slice_text: str) -> ContextState:
        return state


@dataclass
class OracleRuleCompressor:
    """Reference compressor that keeps exactly what the slice needs.

    Retained: initial-input facts quoted by slice tasks, one canonical
    "Step t => v" line per resolved dependency of a slice task, and
    retrieved-document observations that a slice extract task reads.
    Everything else is dropped, including the plan text: the executor hands
    the agent its current instruction directly, so carrying future plan lines
    in the context buys nothing. Purely rule-based, so compressed runs can be
    verified against the symbolic oracle exactly.
    """

    name: str = "oracle_rule"
    prompt_id: str = "oracle_rule"

    def compress(self, state: ContextState, slice_text: str) -> ContextState:
        tasks = _parse_task_lines(slice_text)
        dep_ids: set[int] = set()
        needed_keys: set[str] = set()
        needed_fields: set[tuple[int, str]] = set()
        for _, kind, instruction, after in tasks:
            dep_ids.update(after)
            dep_ids.update(_dep_ids(instruction))
            if kind == "lookup":
                key = _quoted(instruction)
                if key:
                    needed_keys.add(key)
            if kind == "extract":
                fld = _quoted(instruction, last=True)
                ds = _dep_ids(instruction)
                if fld and ds:
                    needed_fields.add((ds[0], fld))

        values = resolved_values("\n".join(state.history + state.observations))
        resolved = set(values)

        kept_facts = []
        for line in state.initial_input.splitlines():
            m = FACT_RE.search(line)
            if m and m.group(1) in needed_keys:
                kept_facts.append(line)

        history = tuple(f"Step {t} => {values[t]}" for t in sorted(dep_ids & resolved))

        def doc_needed(entry: str) -> bool:
            return any(
                re.search(rf"[Ss]tep\s+{d}\s+retrieved", entry) and f"{fld}:" in entry
                for d, fld in needed_fields
            )

        observations = tuple(e for e in state.observations if doc_needed(e))
        retrieved = tuple(e for e in state.retrieved if doc_needed(e))

        return state.with_entries(
            initial_input="\n".join(kept_facts),
            plan_text="",
            history=history,
            observations=observations,
            retrieved=retrieved,
            memory=(),
        )


@dataclass
class PromptCompressor:
    """Compression through a completion backend driven by a prompt.

    Covers both the teacher (large model or scripted stand-in, evolved prompt)
    and the student (distilled model behind the same wire format). Blank
    output means the compression failed; callers fall back to the
    uncompressed context and poison the run.
    """

    backend: CompletionBackend
    prompt: str
    prompt_id: str
    name: str = "teacher"

    def compress(self, state: ContextState, slice_text: str) -> ContextState | None:
        request = CompletionRequest(
            system=self.prompt,
            user=build_compression_input(slice_text, render_context(state)),
        )
        text = self.backend.complete(request).text.strip()
        if not text:
            return None
        return state.with_entries(**_parsed_fields(text))


def _parsed_fields(text: str) -> dict:
    parsed = parse_context(text, step=1)
    return {
        "initial_input": parsed.initial_input,
        "system_prompt": parsed.system_prompt,
        "plan_text": parsed.plan_text,
        "history": parsed.history,
        "observations": parsed.observations,
        "retrieved": parsed.retrieved,
        "memory": parsed.memory,
    }


def _initial_state(wf: Workflow) -> ContextState:
    return ContextState(
        initial_input=wf.initial_input,
        system_prompt=wf.system_prompt,
        plan_text=render_plan(wf.plan.steps),
        step=1,
    )


_LAST_INT_RE = re.compile(r"(\d+)(?!.*\d)")


def _resolve_step(
    answer: str, step: TaskStep, world: WorldState
) -> tuple[str, list[str], WorldState]:
    """Turn the agent's reply into a resolved value plus observation entries."""
    t = step.id
    if not answer.startswith("CALL "):
        return answer.split()[0] if answer.split() else "MISSING_FACT:empty", [], world

    parts = answer.split()
    tool_kind = parts[1] if len(parts) > 1 else ""
    args = dict(p.split("=", 1) for p in parts[2:] if "=" in p)
    try:
        result, world = apply_tool(world, ToolCall(kind=tool_kind, args=args))
    except ValueError:
        marker = f"MISSING_FACT:tool_{tool_kind}"
        return marker, [f"Step {t} tool {tool_kind} rejected => {marker}"], world
    payload = result.payload

    if payload.startswith("NOT_FOUND:"):
        marker = f"MISSING_FACT:{payload[len('NOT_FOUND:'):]}"
        return marker, [f"Step {t} tool {tool_kind} found nothing => {marker}"], world
    if tool_kind == "lookup":
        key = args.get("key", "")
        entry = (
            f"Step {t} tool lookup key={key} queried the key-value store because "
            f"the fact was not present in context and returned stored value => {payload}"
        )
        return payload, [entry], world
    if tool_kind == "search":
        doc_id, value = payload.split()[0], payload.split()[-1]
        doc_text = world.documents.get(doc_id, "")
        entry = f"Step {t} retrieved {doc_id}: {doc_text} | via search, code => {value}"
        return value, [entry], world
    if tool_kind == "read_file":
        path = args.get("path", "")
        m = _LAST_INT_RE.search(payload)
        value = m.group(1) if m else f"MISSING_FACT:{path}"
        entry = f"Step {t} retrieved {path}: {payload} | via read_file, figure => {value}"
        return value, [entry], world
    # table_sum / table_filter / extract / write_file return the value directly
    arg_text = " ".join(f"{k}={v}" for k, v in args.items())
    entry = (
        f"Step {t} tool {tool_kind} {arg_text} ran against the workspace tables "
        f"and files and produced => {payload}"
    )
    return payload, [entry], world


def _run(
    wf: Workflow,
    world: WorldState,
    agent: CompletionBackend,
    compressor: Compressor | None,
    cfg: RunConfig,
    mode: str,
) -> Trajectory:
    state = _initial_state(wf)
    records = []
    per_step = []
    truncated = poisoned = False
    total_tokens = 0
    calls = 0
    max_calls = cfg.step_budget_factor * len(wf.plan)

    for step in wf.plan.steps:
        t = step.id
        if calls >= max_calls or total_tokens > cfg.token_budget:
            truncated = True
            break

        if compressor is not None:
            slice_text = plan_slice(wf.plan, t, cfg.k)
            original_text = render_context(state)
            original = token_count(original_text)
            compressed = compressor.compress(state, slice_text)
            if compressed is None:
                records.append(make_compression_record(
                    t, cfg.k, slice_text, original, 0, compressor.prompt_id,
                    compressed_empty=True, context_text=original_text,
                ))
                poisoned = True
            else:
                target_text = render_context(compressed)
                records.append(make_compression_record(
                    t, cfg.k, slice_text, original, token_count(target_text),
                    compressor.prompt_id, context_text=original_text,
                    target_text=target_text,
                ))
                state = compressed

        task_line = f"Step {t} [{step.kind}]: {step.instruction}"
        user = f"{render_context(state)}\n{CURRENT_TASK_HEADER}\n{task_line}"
        response = agent.complete(CompletionRequest(system=state.system_prompt, user=user))
        calls += 1
        total_tokens += response.prompt_tokens + response.completion_tokens
        answer = response.text.strip()
        value, obs_entries, world = _resolve_step(answer, step, world)

        per_step.append(StepRecord(
            step=t,
            context_tokens=context_tokens(state),
            digest=context_digest(state),
            agent_output=answer,
            tool_results=tuple(obs_entries),
        ))
        history_entry = (
            f"Step {t} [{step.kind}] the agent reviewed the working context, "
            f"carried out the instruction for this turn, checked the outcome "
            f"against its dependencies, and logged the resolved value => {value}"
        )
        state = update_context(state, history_entry, [ToolResult(payload=e) for e in obs_entries])

    final_answer = ""
    if not truncated:
        user = f"{render_context(state)}\n{FINAL_HEADER}\n{wf.final_requirement}"
        response = agent.complete(CompletionRequest(system=state.system_prompt, user=user))
        final_answer = response.text.strip()

    return Trajectory(
        workflow_id=wf.id,
        mode=mode,
        per_step=tuple(per_step),
        final_answer=final_answer,
        compression_records=tuple(records),
        truncated=truncated,
        poisoned=poisoned,
    )


def run_full(
    wf: Workflow, world: WorldState, agent: CompletionBackend,
    cfg: RunConfig | None = None,
) -> Trajectory:
    return _run(wf, world, agent, None, cfg or RunConfig(), mode="full")


def run_compressed(
    wf: Workflow, world: WorldState, agent: CompletionBackend,
    compressor: Compressor, cfg: RunConfig | None = None,
) -> tuple[Trajectory, list]:
    mode = "compressed" if compressor.name in ("teacher", "student", "oracle_rule", "identity") \
        else f"baseline:{compressor.name}"
    traj = _run(wf, world, agent, compressor, cfg or RunConfig(), mode=mode)
    return traj, list(traj.compression_records)


def run_pair(
    wf: Workflow, world: WorldState, agent: CompletionBackend,
    compressor: Compressor, cfg: RunConfig | None = None,
) -> TrajectoryPair:
    """Full-context reference run plus compressed run over the same workflow."""
    cfg = cfg or RunConfig()
    full = run_full(wf, world, agent, cfg)
    compressed, _ = run_compressed(wf, world, agent, compressor, cfg)
    return TrajectoryPair(
        workflow_id=wf.id,
        workflow_desc=wf.describe(),
        gold_answer=wf.gold_answer,
        full=full,
        compressed=compressed,
    )
