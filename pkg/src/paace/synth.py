"""Deterministic generator of long-horizon workflows over a simulated tool world.

Every workflow comes with a symbolic ground-truth oracle, so compression
fidelity can be verified exactly without any model in the loop. Generation is
a pure function of (seed, config): same inputs, byte-identical outputs.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field

from .model import Plan, TaskStep, ToolResult, Workflow

_WORDS = (
    "alpha", "bravo", "cedar", "delta", "ember", "falcon", "granite", "harbor",
    "indigo", "juniper", "krypton", "lumen", "meadow", "nimbus", "onyx", "pylon",
    "quartz", "ridge", "sable", "tundra", "umber", "vertex", "willow", "xenon",
    "yarrow", "zephyr",
)

_FIELDS = ("price", "volume", "rating", "weight", "count")

_LOG_TEMPLATES = (
    "[log] service worker heartbeat ok latency {a}ms queue depth {b}",
    "[log] cache refresh cycle completed in {a}ms with {b} evictions",
    "[log] partial summary discarded after {a} retries by scheduler node {b}",
    "[log] telemetry batch {b} flushed upstream taking {a}ms total",
    "[log] session token rotated after {a} minutes idle on shard {b}",
    "[log] background indexer visited {b} entries in {a}ms sweep",
)

_DOC_FILLER = (
    "prepared for the operations review meeting",
    "figures are preliminary and subject to audit",
    "distribution restricted to the planning group",
    "previous revision archived under the shared drive",
)

DEFAULT_SYSTEM_PROMPT = (
    "You are a tool-using agent. Execute the plan one step at a time and report exact values."
)

_ACQ_KINDS = ("lookup", "search", "file_op", "table_op")
_FACT_RE = re.compile(r"^- fact (\w+) = (\S+)$")


@dataclass(frozen=True)
class ToolCall:
    kind: str
    args: dict[str, str]


@dataclass(frozen=True)
class WorldState:
    """Ground-truth tool world: key-value facts, documents, tables, files."""

    kv: dict[str, str] = field(default_factory=dict)
    documents: dict[str, str] = field(default_factory=dict)
    tables: dict[str, list[dict[str, int]]] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class GeneratorConfig:
    min_steps: int = 5
    max_steps: int = 30
    noise_level: float = 0.5
    distractor_count: int = 12
    domain_mix: dict[str, float] = field(default_factory=lambda: {
        "lookup": 2.0, "search": 1.5, "file_op": 1.0, "table_op": 1.0,
        "extract": 1.0, "arithmetic": 1.5, "aggregate": 1.0,
    })
    # Dependency distance range for consumer steps. The default (1, 2) keeps
    # every dependency reachable by a k=2 lookahead; ablation corpora pin both
    # ends to the same d to force consumption exactly d steps after acquisition.
    dep_gap_min: int = 1
    dep_gap_max: int = 2
    answer_style: str = "bare"  # "bare" | "sentence"

    def validate(self) -> None:
        if not 1 <= self.min_steps <= self.max_steps:
            raise ValueError(f"invalid step range [{self.min_steps}, {self.max_steps}]")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError(f"noise_level must be in [0,1], got {self.noise_level}")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be >= 0")
        if not self.domain_mix or any(w < 0 for w in self.domain_mix.values()):
            raise ValueError("domain_mix weights must be nonnegative")
        if sum(self.domain_mix.values()) <= 0:
            raise ValueError("domain_mix weights must sum > 0")
        if not 1 <= self.dep_gap_min <= self.dep_gap_max:
            raise ValueError(f"invalid dep gap range [{self.dep_gap_min}, {self.dep_gap_max}]")
        if self.min_steps <= self.dep_gap_max:
            raise ValueError("min_steps must exceed dep_gap_max")
        if self.answer_style not in ("bare", "sentence"):
            raise ValueError(f"unknown answer_style {self.answer_style!r}")


def style_answer(value: str, style: str) -> str:
    if style == "sentence":
        return f"the final computed result is {value} units overall"
    return value


@dataclass(frozen=True)
class _StepSketch:
    kind: str
    deps: tuple[int, ...] = ()
    op: str = ""


def _weighted_choice(rng: random.Random, weights: dict[str, float], allowed: list[str]) -> str:
    pool = [(k, weights.get(k, 0.0)) for k in allowed if weights.get(k, 0.0) > 0]
    if not pool:
        pool = [(k, 1.0) for k in allowed]
    total = sum(w for _, w in pool)
    x = rng.random() * total
    acc = 0.0
    for k, w in pool:
        acc += w
        if x <= acc:
            return k
    return pool[-1][0]


def _sketch_plan(rng: random.Random, n: int, cfg: GeneratorConfig) -> list[_StepSketch]:
    gmin, gmax = cfg.dep_gap_min, cfg.dep_gap_max
    sketches: list[_StepSketch] = []
    doc_producers: list[int] = []  # steps whose output is a retrievable document

    def window(t: int) -> list[int]:
        return [i for i in range(max(1, t - gmax), t - gmin + 1)]

    for t in range(1, n):
        win = window(t)
        allowed = list(_ACQ_KINDS)
        if any(i in doc_producers for i in win):
            allowed.append("extract")
        if len(win) >= 2:
            allowed.append("arithmetic")
            if gmax >= 2:
                allowed.append("aggregate")
        kind = _weighted_choice(rng, cfg.domain_mix, allowed)
        if kind == "extract":
            dep = rng.choice([i for i in win if i in doc_producers])
            sketches.append(_StepSketch("extract", (dep,)))
        elif kind == "arithmetic":
            deps = tuple(sorted(rng.sample(win, 2)))
            sketches.append(_StepSketch("arithmetic", deps, rng.choice(("sum", "diff", "max"))))
        elif kind == "aggregate":
            # Multi-hop by construction: one dependency sits >= 2 steps back.
            deps = tuple(sorted({t - gmax, t - gmin}))
            sketches.append(_StepSketch("aggregate", deps, "sum"))
        else:
            sketches.append(_StepSketch(kind))
            if kind in ("search", "file_op"):
                doc_producers.append(t)

    answer_deps = tuple(sorted({n - gmin, n - gmax}))
    sketches.append(_StepSketch("answer", answer_deps, "sum"))
    return sketches


def generate_workflow(seed: int, cfg: GeneratorConfig | None = None) -> tuple[Workflow, WorldState]:
    """Sample one workflow plus the tool world it runs against."""
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    rng = random.Random(seed)
    n = rng.randint(cfg.min_steps, cfg.max_steps)
    sketches = _sketch_plan(rng, n, cfg)

    kv: dict[str, str] = {}
    documents: dict[str, str] = {}
    tables: dict[str, list[dict[str, int]]] = {}
    files: dict[str, str] = {}
    steps: list[TaskStep] = []
    values: dict[int, int] = {}
    fact_lines: list[str] = []

    for t, sk in enumerate(sketches, start=1):
        word = rng.choice(_WORDS)
        if sk.kind == "lookup":
            key = f"{word}_{t}"
            val = rng.randint(2, 99)
            kv[key] = str(val)
            fact_lines.append(f"- fact {key} = {val}")
            instr = f"Look up the value of '{key}'."
            values[t] = val
        elif sk.kind == "search":
            kw = f"{word}{t}"
            code = rng.randint(100, 999)
            doc_id = f"doc_{t:02d}"
            fields = " | ".join(f"{f}: {rng.randint(2, 99)}" for f in rng.sample(_FIELDS, 3))
            filler = rng.choice(_DOC_FILLER)
            documents[doc_id] = (
                f"quarterly {kw} report | {fields} | {filler} | code: {code}"
            )
            instr = f"Search the document store for the keyword '{kw}' and note the matched document's code."
            values[t] = code
        elif sk.kind == "file_op":
            path = f"notes/{word}_{t}.txt"
            val = rng.randint(2, 99)
            filler = rng.choice(_DOC_FILLER)
            files[path] = f"memo regarding {word} operations | {filler} | figure: {val}"
            instr = f"Read the file '{path}' and note the figure at the end."
            values[t] = val
        elif sk.kind == "table_op":
            tid = f"tbl_{t}"
            col = rng.choice(("units", "score", "load"))
            rows = [{col: rng.randint(1, 40)} for _ in range(rng.randint(3, 5))]
            tables[tid] = rows
            instr = f"Compute the sum of column '{col}' in table '{tid}'."
            values[t] = sum(r[col] for r in rows)
        elif sk.kind == "extract":
            dep = sk.deps[0]
            doc_id = f"doc_{dep:02d}"
            if doc_id in documents:
                fld = documents[doc_id].split(" | ")[1].split(":")[0]
            else:  # dependency was a file read; extract its recorded figure
                fld = "figure"
            instr = f"From the document retrieved in step {dep}, extract the field '{fld}'."
            if doc_id in documents:
                m = re.search(rf"{fld}: (\d+)", documents[doc_id])
                values[t] = int(m.group(1))  # type: ignore[union-attr]
            else:
                values[t] = values[dep]
        elif sk.kind in ("arithmetic", "aggregate"):
            dep_vals = [values[d] for d in sk.deps]
            if sk.op == "diff":
                values[t] = dep_vals[-1] - dep_vals[0]
            elif sk.op == "max":
                values[t] = max(dep_vals)
            else:
                values[t] = sum(dep_vals)
            ids = " and ".join(str(d) for d in sk.deps)
            verb = {"sum": "sum", "diff": "difference", "max": "maximum"}[sk.op or "sum"]
            if sk.kind == "aggregate":
                instr = f"Aggregate by summing the results of steps {ids}."
            else:
                instr = f"Compute the {verb} of the results of steps {ids}."
        else:  # answer
            dep_vals = [values[d] for d in sk.deps]
            values[t] = sum(dep_vals)
            ids = " and ".join(str(d) for d in sk.deps)
            instr = f"Report the final answer: the sum of the results of steps {ids}."
        steps.append(TaskStep(id=t, instruction=instr, depends_on=frozenset(sk.deps), kind=sk.kind))

    # Noisy initial input: referenced facts, unreferenced distractor facts, and
    # log chatter, shuffled together under the generation seed.
    lines = list(fact_lines)
    used_keys = set(kv)
    for i in range(cfg.distractor_count):
        word = rng.choice(_WORDS)
        key = f"{word}_x{i}"
        while key in used_keys:
            key = f"{rng.choice(_WORDS)}_x{i}"
        used_keys.add(key)
        lines.append(f"- fact {key} = {rng.randint(2, 99)}")
    for _ in range(round(cfg.noise_level * 2 * n)):
        tpl = rng.choice(_LOG_TEMPLATES)
        lines.append(tpl.format(a=rng.randint(5, 900), b=rng.randint(1, 64)))
    rng.shuffle(lines)

    gold = style_answer(str(values[n]), cfg.answer_style)
    answer_ids = ", ".join(str(d) for d in sketches[-1].deps)
    final_requirement = f"Report the combined result of steps {answer_ids} as the final answer."
    if cfg.answer_style == "sentence":
        final_requirement += (
            " Phrase the answer exactly as: the final computed result is <value> units overall."
        )
    wf = Workflow(
        id=f"wf-{seed}",
        initial_input="\n".join(lines),
        system_prompt=DEFAULT_SYSTEM_PROMPT,
        plan=Plan(steps=tuple(steps)),
        final_requirement=final_requirement,
        seed=seed,
        gold_answer=gold,
    )
    world = WorldState(kv=kv, documents=documents, tables=tables, files=files)
    return wf, world


def iter_fact_lines(initial_input: str):
    for line in initial_input.splitlines():
        m = _FACT_RE.match(line.strip())
        if m:
            yield m.group(1), m.group(2)


def search_documents(world: WorldState, keyword: str) -> tuple[str, str] | None:
    """First document (by sorted id) containing the keyword, or None."""
    for doc_id in sorted(world.documents):
        if keyword in world.documents[doc_id]:
            return doc_id, world.documents[doc_id]
    return None


def apply_tool(world: WorldState, call: ToolCall) -> tuple[ToolResult, WorldState]:
    """Apply one tool call; read-only kinds leave the world untouched.

    Missing keys, documents, or tables surface as a NOT_FOUND payload so the
    agent can recover; they never raise.
    """
    kind = call.kind
    args = call.args
    if kind == "lookup":
        key = args.get("key", "")
        if key in world.kv:
            return ToolResult(payload=str(world.kv[key])), world
        return ToolResult(payload=f"NOT_FOUND:{key}"), world
    if kind == "search":
        hit = search_documents(world, args.get("query", ""))
        if hit is None:
            return ToolResult(payload=f"NOT_FOUND:{args.get('query', '')}"), world
        doc_id, text = hit
        m = re.search(r"code: (\d+)", text)
        code = m.group(1) if m else "0"
        return ToolResult(payload=f"{doc_id} {code}"), world
    if kind == "read_file":
        path = args.get("path", "")
        if path in world.files:
            return ToolResult(payload=world.files[path]), world
        return ToolResult(payload=f"NOT_FOUND:{path}"), world
    if kind == "write_file":
        path = args.get("path", "")
        new_files = dict(world.files)
        new_files[path] = args.get("text", "")
        new_world = WorldState(kv=world.kv, documents=world.documents,
                               tables=world.tables, files=new_files)
        return ToolResult(payload=f"ok:{path}"), new_world
    if kind == "table_sum":
        tid, col = args.get("table", ""), args.get("col", "")
        rows = world.tables.get(tid)
        if rows is None:
            return ToolResult(payload=f"NOT_FOUND:{tid}"), world
        return ToolResult(payload=str(sum(r.get(col, 0) for r in rows))), world
    if kind == "table_filter":
        tid, col = args.get("table", ""), args.get("col", "")
        rows = world.tables.get(tid)
        if rows is None:
            return ToolResult(payload=f"NOT_FOUND:{tid}"), world
        threshold = int(args.get("min", "0"))
        return ToolResult(payload=str(sum(1 for r in rows if r.get(col, 0) >= threshold))), world
    if kind == "extract":
        doc_id, fld = args.get("doc", ""), args.get("field", "")
        text = world.documents.get(doc_id, world.files.get(doc_id, ""))
        m = re.search(rf"{re.escape(fld)}: (\d+)", text)
        if m:
            return ToolResult(payload=m.group(1)), world
        return ToolResult(payload=f"NOT_FOUND:{doc_id}.{fld}"), world
    raise ValueError(f"unsupported tool kind {kind!r}")


def oracle_answer(wf: Workflow, world: WorldState) -> str:
    """Execute the plan symbolically against the world; no agent, no context."""
    values: dict[int, str] = {}
    for step in wf.plan.steps:
        t = step.id
        instr = step.instruction
        if step.kind == "lookup":
            key = _quoted(instr)
            values[t] = world.kv.get(key, f"NOT_FOUND:{key}")
        elif step.kind == "search":
            kw = _quoted(instr)
            hit = search_documents(world, kw)
            if hit is None:
                values[t] = f"NOT_FOUND:{kw}"
            else:
                m = re.search(r"code: (\d+)", hit[1])
                values[t] = m.group(1) if m else "0"
        elif step.kind == "file_op":
            path = _quoted(instr)
            text = world.files.get(path, "")
            m = re.search(r"(\d+)\s*$", text)
            values[t] = m.group(1) if m else f"NOT_FOUND:{path}"
        elif step.kind == "table_op":
            m = re.search(r"column '([^']+)' in table '([^']+)'", instr)
            col, tid = m.group(1), m.group(2)  # type: ignore[union-attr]
            rows = world.tables.get(tid, [])
            values[t] = str(sum(r.get(col, 0) for r in rows))
        elif step.kind == "extract":
            dep = min(step.depends_on)
            fld = _quoted(instr, last=True)
            doc_id = f"doc_{dep:02d}"
            text = world.documents.get(doc_id, "")
            m = re.search(rf"{re.escape(fld)}: (\d+)", text)
            values[t] = m.group(1) if m else values[dep]
        else:  # arithmetic / aggregate / answer
            deps = sorted(step.depends_on)
            nums = [int(values[d]) for d in deps]
            if "difference" in instr:
                values[t] = str(nums[-1] - nums[0])
            elif "maximum" in instr:
                values[t] = str(max(nums))
            else:
                values[t] = str(sum(nums))
    style = "sentence" if (wf.gold_answer or "").startswith("the final computed") else "bare"
    return style_answer(values[len(wf.plan)], style)


def _quoted(text: str, last: bool = False) -> str:
    found = re.findall(r"'([^']+)'", text)
    if not found:
        raise ValueError(f"no quoted argument in {text!r}")
    return found[-1] if last else found[0]
