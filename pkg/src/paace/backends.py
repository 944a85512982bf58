"""Model backends: scripted mocks for hermetic runs plus HTTP clients.

The scripted agent, teacher, and judge let the whole pipeline run offline with
exactly reproducible behavior. The HTTP backends speak the common
chat-completions and embeddings wire format and can stand in for any of the
three roles.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests

from .model import parse_context, render_context, token_count

log = logging.getLogger("paace.backends")


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Network or service failure after retries were exhausted."""


class SchemaError(BackendError):
    """Response arrived but did not match the expected shape."""


@dataclass(frozen=True)
class CompletionRequest:
    system: str
    user: str
    max_tokens: int = 2048
    temperature: float = 0.0


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int


class CompletionBackend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    model: str
    auth_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    base_delay_s: float = 0.5
    max_concurrency: int = 4


# Patterns shared by the scripted roles. Resolved step values appear in
# history and observation entries as "Step <t> ... => <value>"; the last
# occurrence for a step id wins.
VALUE_RE = re.compile(r"[Ss]tep\s+(\d+)\b[^\n]*?=>\s*(\S+)")
FACT_RE = re.compile(r"fact\s+(\S+)\s*=\s*(\S+)")
TASK_RE = re.compile(r"Step\s+(\d+)\s+\[(\w+)\]:\s*(.+?)(?:\s*\(after:\s*([\d,\s]*)\))?\s*$")

MISSING_FACT = "MISSING_FACT:"
SENTENCE_HINT = "final computed result"


def resolved_values(text: str) -> dict[int, str]:
    """Last resolved value per step id mentioned anywhere in the text."""
    out: dict[int, str] = {}
    for m in VALUE_RE.finditer(text):
        out[int(m.group(1))] = m.group(2)
    return out


def context_facts(text: str) -> dict[str, str]:
    return {m.group(1): m.group(2) for m in FACT_RE.finditer(text)}


def _stable_fraction(text: str) -> float:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") / 2**32


def _quoted(text: str, last: bool = False) -> str | None:
    found = re.findall(r"'([^']+)'", text)
    if not found:
        return None
    return found[-1] if last else found[0]


def _dep_ids(instruction: str) -> list[int]:
    m = re.search(r"steps?\s+([\d,\s]+(?:and\s+\d+)?)", instruction)
    if not m:
        return []
    return [int(x) for x in re.findall(r"\d+", m.group(1))]


@dataclass
class ScriptedAgentBackend:
    """Deterministic stand-in for the task-executing model.

    Reads the rendered context plus a CURRENT TASK or FINAL block and answers
    with either a bare value, a tool invocation line ("CALL <kind> k=v ..."),
    or a MISSING_FACT marker when a required dependency is absent from the
    context.

    flaky_finalize_rate injects a deterministic final-step fault (the agent
    hedges instead of answering) on a stable fraction of workflows, selected
    by hashing the FINAL requirement so both runs of a pair misbehave
    together. Used to exercise the outcome filters; zero in normal operation.
    """

    flaky_finalize_rate: float = 0.0

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        text = self._respond(request.user)
        return CompletionResponse(
            text=text,
            prompt_tokens=token_count(request.system) + token_count(request.user),
            completion_tokens=token_count(text),
        )

    def _respond(self, user: str) -> str:
        final_m = re.search(r"^## FINAL\n(.*)", user, re.MULTILINE | re.DOTALL)
        if final_m:
            return self._finalize(user, final_m.group(1).strip())
        task_m = re.search(r"^## CURRENT TASK\n(.+)", user, re.MULTILINE)
        if not task_m:
            return "MISSING_FACT:current_task"
        parsed = TASK_RE.match(task_m.group(1).strip())
        if not parsed:
            return "MISSING_FACT:current_task"
        step_id, kind, instruction = int(parsed.group(1)), parsed.group(2), parsed.group(3)
        context = user[: task_m.start()]

        if kind == "lookup":
            key = _quoted(instruction)
            facts = context_facts(context)
            if key in facts:
                return facts[key]
            return f"CALL lookup key={key}"
        if kind == "search":
            return f"CALL search query={_quoted(instruction)}"
        if kind == "file_op":
            return f"CALL read_file path={_quoted(instruction)}"
        if kind == "table_op":
            m = re.search(r"column '([^']+)' in table '([^']+)'", instruction)
            if not m:
                return "MISSING_FACT:table_args"
            return f"CALL table_sum table={m.group(2)} col={m.group(1)}"
        if kind == "extract":
            deps = _dep_ids(instruction)
            fld = _quoted(instruction, last=True)
            dep = deps[0] if deps else 0
            # Stay inside step <dep>'s retrieved entry; entries sit on one
            # rendered line so a bare non-greedy scan could bleed into the
            # next document.
            entry_re = re.compile(
                rf"[Ss]tep\s+{dep}\s+retrieved"
                rf"(?:(?![Ss]tep\s+\d+\s+retrieved)[^\n])*?{re.escape(fld or '')}:\s*(\d+)"
            )
            m = entry_re.search(context)
            if m:
                return m.group(1)
            return f"MISSING_FACT:{fld}@step{dep}"
        # arithmetic / aggregate / answer: combine earlier resolved values
        deps = _dep_ids(instruction)
        values = resolved_values(context)
        missing = [d for d in deps if d not in values]
        if not deps or missing:
            name = f"step{missing[0]}" if missing else "deps"
            return f"MISSING_FACT:{name}"
        try:
            nums = [int(values[d]) for d in sorted(deps)]
        except ValueError:
            return f"MISSING_FACT:step{deps[0]}"
        if "difference" in instruction:
            result = nums[-1] - nums[0]
        elif "maximum" in instruction:
            result = max(nums)
        else:
            result = sum(nums)
        return str(result)

    def _finalize(self, user: str, requirement: str) -> str:
        values = resolved_values(user[: user.index("## FINAL")])
        if not values:
            return "MISSING_FACT:final"
        # The answer step carries the combined result and resolves last.
        value = values[max(values)]
        if self.flaky_finalize_rate > 0 and _stable_fraction(requirement) < self.flaky_finalize_rate:
            return f"provisional {value}"
        if SENTENCE_HINT in requirement:
            return f"the final computed result is {value} units overall"
        return value


# Directive library understood by the scripted teacher. Prompt evolution
# mutates prompts by appending these; the dependency-retention directive is
# the one that actually protects multi-hop workflows.
DIRECTIVE_LIBRARY = (
    "Keep every context entry that an upcoming task depends on, resolving step references.",
    "Drop plan lines for steps that are already resolved in the history.",
    "Rewrite history and observation entries down to their resolved values.",
    "Keep initial-input facts that upcoming tasks mention and drop the rest.",
    "Remove log chatter and unreferenced facts from the initial input.",
    "Keep only the most recent history entry and discard older ones.",
    "Preserve all retrieved documents verbatim.",
)

DEP_DIRECTIVE = DIRECTIVE_LIBRARY[0]
BASE_TEACHER_PROMPT = (
    "Compress the agent context while keeping it sufficient for the upcoming tasks. "
    "Output only the compressed context."
)
# The hand-tuned full teacher prompt: dependency retention plus every
# safe reduction directive.
DEFAULT_TEACHER_PROMPT = "\n".join((BASE_TEACHER_PROMPT,) + DIRECTIVE_LIBRARY[:5])


def _parse_task_lines(block: str) -> list[tuple[int, str, str, list[int]]]:
    tasks = []
    for line in block.splitlines():
        m = TASK_RE.match(line.strip())
        if m:
            after = [int(x) for x in re.findall(r"\d+", m.group(4) or "")]
            tasks.append((int(m.group(1)), m.group(2), m.group(3), after))
    return tasks


@dataclass
class ScriptedTeacherBackend:
    """Directive-driven compressor mock.

    The system prompt is treated as a set of behavior directives (see
    DIRECTIVE_LIBRARY); the user message carries a NEXT_TASKS block and the
    rendered context. Output is a rendered compressed context. By default the
    mock behaves like a naive summarizer with a one-turn recency window, so
    values acquired more than one step before their consumer are lost unless
    the prompt contains the dependency-retention directive. Compression
    fidelity is therefore entirely determined by the prompt, which gives
    prompt evolution a real signal with no model in the loop.

    corrupt_value_rate deterministically perturbs kept resolved values on a
    stable fraction of calls (hashed from the user payload); used to test the
    outcome filters.
    """

    corrupt_value_rate: float = 0.0

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        text = self._compress(request.system, request.user)
        return CompletionResponse(
            text=text,
            prompt_tokens=token_count(request.system) + token_count(request.user),
            completion_tokens=token_count(text),
        )

    def _compress(self, prompt: str, user: str) -> str:
        m = re.search(r"^## NEXT_TASKS\n(.*?)^## CONTEXT\n(.*)", user, re.MULTILINE | re.DOTALL)
        if not m:
            return ""
        tasks = _parse_task_lines(m.group(1))
        state = parse_context(m.group(2), step=1)

        has = lambda d: d in prompt
        keep_deps = has(DEP_DIRECTIVE)
        drop_resolved_plan = has(DIRECTIVE_LIBRARY[1])
        canonicalize = has(DIRECTIVE_LIBRARY[2])
        filter_facts = has(DIRECTIVE_LIBRARY[3])
        drop_noise = has(DIRECTIVE_LIBRARY[4])
        last_history_only = has(DIRECTIVE_LIBRARY[5])
        keep_docs = has(DIRECTIVE_LIBRARY[6])

        values = resolved_values("\n".join(state.history + state.observations))
        resolved_ids = set(values)
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

        # Initial input. The dependency directive is a retention whitelist, so
        # under it only fact lines the slice needs survive; filter_facts and
        # drop_noise buy the same pruning piecemeal.
        kept_input = []
        for line in state.initial_input.splitlines():
            fm = FACT_RE.search(line)
            if fm:
                if not (filter_facts or keep_deps) or fm.group(1) in needed_keys:
                    kept_input.append(line)
            elif line.startswith("[log]"):
                if not (drop_noise or keep_deps):
                    kept_input.append(line)
            else:
                kept_input.append(line)
        initial_input = "\n".join(kept_input)

        # Plan: resolved task lines are dead weight once their value is logged.
        plan_text = state.plan_text
        if drop_resolved_plan or keep_deps:
            kept_lines = []
            for line in plan_text.splitlines():
                tm = TASK_RE.match(line.strip())
                if tm and int(tm.group(1)) in resolved_ids:
                    continue
                kept_lines.append(line)
            plan_text = "\n".join(kept_lines)

        def keep_entry(entry: str) -> bool:
            ids = {int(x) for x in re.findall(r"[Ss]tep\s+(\d+)", entry)}
            return bool(ids & dep_ids)

        def is_doc(entry: str) -> bool:
            return "retrieved" in entry

        def squeeze(entry: str, force: bool) -> str:
            if not (canonicalize or force) or is_doc(entry):
                return entry
            vals = resolved_values(entry)
            if vals:
                t, v = max(vals.items())
                return f"Step {t} => {v}"
            return entry

        # History and observations default to a naive recency window: only
        # the most recent turn survives a pass. The dependency directive is
        # what widens retention to entries upcoming tasks actually reference,
        # resolving them to canonical value lines; any prompt without it loses
        # values acquired more than one step before their consumer.
        # last_history_only forces the naive window even when the dependency
        # directive is present.
        dep_mode = keep_deps and not last_history_only
        if dep_mode:
            keep_hist = [e for e in state.history if keep_entry(e)]
            keep_obs = [e for e in state.observations if keep_entry(e)]
            retrieved = tuple(
                e for e in state.retrieved
                if keep_entry(e) or any(
                    f"tep {d} " in e and f"{fld}:" in e for d, fld in needed_fields
                )
            )
        else:
            keep_hist = list(state.history[-1:])
            keep_obs = list(state.observations[-1:])
            retrieved = state.retrieved[-1:]
        if keep_docs:
            keep_obs = [e for e in state.observations if is_doc(e) or e in keep_obs]
            retrieved = state.retrieved

        compressed = state.with_entries(
            initial_input=initial_input,
            plan_text=plan_text,
            history=tuple(squeeze(e, dep_mode) for e in keep_hist),
            observations=tuple(squeeze(e, dep_mode) for e in keep_obs),
            retrieved=retrieved,
        )
        out = render_context(compressed)
        if self.corrupt_value_rate > 0 and _stable_fraction(user) < self.corrupt_value_rate:
            out = VALUE_RE.sub(self._bump, out)
        return out

    @staticmethod
    def _bump(m: re.Match) -> str:
        head = m.group(0)[: m.start(2) - m.start(0)]
        try:
            return head + str(int(m.group(2)) + 1)
        except ValueError:
            return m.group(0)


@dataclass
class ScriptedSummarizerBackend:
    """Heuristic summarizer mock for the prompting baseline.

    Collapses whatever text it is given to the resolved step values it can
    find, one canonical line per step. Keeps numeric chains alive but loses
    document bodies, which is the characteristic weakness of summary-style
    compression.
    """

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        values = resolved_values(request.user)
        text = "\n".join(f"Step {t} => {v}" for t, v in sorted(values.items()))
        return CompletionResponse(
            text=text,
            prompt_tokens=token_count(request.system) + token_count(request.user),
            completion_tokens=token_count(text),
        )


class HashEmbedder:
    """Embeds text as an L2-normalized hashed bag-of-words vector.

    Tokens are lowercased whitespace words; each token increments the bucket
    sha256(token)[:8] mod dim. Deterministic across processes, no model.
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for tok in text.lower().split():
                digest = hashlib.sha256(tok.encode("utf-8")).digest()
                out[row, int.from_bytes(digest[:8], "big") % self.dim] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


JUDGE_VERDICTS = ("better", "equal", "worse")

JUDGE_TEMPLATE = (
    "Task description:\n{description}\n\n"
    "Answer A (reference run): {full}\n"
    "Answer B (compressed run): {compressed}\n\n"
    "Is answer B better, equal, or worse than answer A for this task? "
    "Reply with exactly one word: better, equal, or worse."
)


class ScriptedJudge:
    """Grades the compressed answer against the full one using the gold line.

    The workflow description embeds "GOLD: <answer>"; matching gold while the
    reference misses it is better, the reverse is worse, anything else equal.
    """

    def verdict(self, full_answer: str, compressed_answer: str, description: str) -> str:
        m = re.search(r"^GOLD: (.*)$", description, re.MULTILINE)
        gold = m.group(1).strip() if m else ""
        full_ok = full_answer.strip() == gold
        comp_ok = compressed_answer.strip() == gold
        if comp_ok and not full_ok:
            return "better"
        if full_ok and not comp_ok:
            return "worse"
        return "equal"


class CompletionJudge:
    """Judge role backed by any completion backend."""

    def __init__(self, backend: CompletionBackend):
        self.backend = backend

    def verdict(self, full_answer: str, compressed_answer: str, description: str) -> str:
        req = CompletionRequest(
            system="You compare two answers to the same task.",
            user=JUDGE_TEMPLATE.format(
                description=description, full=full_answer, compressed=compressed_answer
            ),
            max_tokens=4,
        )
        word = self.backend.complete(req).text.strip().lower().split()
        if not word or word[0] not in JUDGE_VERDICTS:
            raise SchemaError(f"judge returned {word!r}, expected one of {JUDGE_VERDICTS}")
        return word[0]


class _RetryingHTTP:
    def __init__(self, config: BackendConfig):
        self.config = config
        self._semaphore = threading.Semaphore(config.max_concurrency)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env:
            token = os.environ.get(self.config.auth_env)
            if not token:
                raise TransportError(f"auth env var {self.config.auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def post_json(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.base_delay_s * 2 ** (attempt - 1))
            try:
                with self._semaphore:
                    resp = requests.post(
                        url, json=payload, headers=self._headers(),
                        timeout=self.config.timeout_s,
                    )
                # Request bodies and auth headers stay out of the logs.
                log.debug("POST %s attempt=%d status=%d", url, attempt, resp.status_code)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = TransportError(f"{url} returned {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise TransportError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json()
                except ValueError as exc:
                    raise SchemaError(f"{url} returned non-JSON body") from exc
            except requests.RequestException as exc:
                last_error = exc
        raise TransportError(f"{url} failed after {self.config.max_retries + 1} attempts") from last_error


class HTTPCompletionBackend(_RetryingHTTP):
    """Chat-completions client with bounded retries and a concurrency cap."""

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self.post_json("/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise SchemaError(f"malformed completion response: {data!r:.200}") from exc
        if not isinstance(text, str):
            raise SchemaError("completion content is not a string")
        usage = data.get("usage") or {}
        return CompletionResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", token_count(request.user))),
            completion_tokens=int(usage.get("completion_tokens", token_count(text))),
        )


class HTTPEmbeddingBackend(_RetryingHTTP):
    """Embeddings client; returns one row per input text."""

    def embed(self, texts: list[str]) -> np.ndarray:
        data = self.post_json("/embeddings", {"model": self.config.model, "input": texts})
        try:
            rows = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed embeddings response: {data!r:.200}") from exc
        if len(rows) != len(texts):
            raise SchemaError(f"expected {len(texts)} embeddings, got {len(rows)}")
        return np.asarray(rows, dtype=np.float64)
