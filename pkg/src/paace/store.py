"""Run-directory persistence: config snapshot, corpus, logs, reports.

Everything is line-oriented JSON so a crashed run leaves a prefix-valid log
and any report can be recomputed offline from the directory alone. One party
writes a given log; records funnel through a lock-guarded appender.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path

from .model import (
    CompressionRecord,
    Plan,
    StepRecord,
    TaskStep,
    Trajectory,
    Workflow,
)
from .scoring import SuccessLabel
from .synth import WorldState

SCHEMA_VERSION = 1


class StoreSchemaError(Exception):
    """A persisted record does not match the expected shape."""


def workflow_to_dict(wf: Workflow) -> dict:
    return {
        "id": wf.id,
        "initial_input": wf.initial_input,
        "system_prompt": wf.system_prompt,
        "plan": [
            {
                "id": s.id,
                "instruction": s.instruction,
                "depends_on": sorted(s.depends_on),
                "kind": s.kind,
            }
            for s in wf.plan.steps
        ],
        "final_requirement": wf.final_requirement,
        "seed": wf.seed,
        "gold_answer": wf.gold_answer,
    }


def workflow_from_dict(data: dict) -> Workflow:
    try:
        steps = tuple(
            TaskStep(
                id=s["id"],
                instruction=s["instruction"],
                depends_on=frozenset(s["depends_on"]),
                kind=s["kind"],
            )
            for s in data["plan"]
        )
        return Workflow(
            id=data["id"],
            initial_input=data["initial_input"],
            system_prompt=data["system_prompt"],
            plan=Plan(steps=steps),
            final_requirement=data["final_requirement"],
            seed=data["seed"],
            gold_answer=data.get("gold_answer"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreSchemaError(f"bad workflow record: {exc}") from exc


def world_to_dict(world: WorldState) -> dict:
    return {
        "kv": dict(world.kv),
        "documents": dict(world.documents),
        "tables": {k: list(v) for k, v in world.tables.items()},
        "files": dict(world.files),
    }


def world_from_dict(data: dict) -> WorldState:
    try:
        return WorldState(
            kv=dict(data["kv"]),
            documents=dict(data["documents"]),
            tables={k: [dict(r) for r in v] for k, v in data["tables"].items()},
            files=dict(data["files"]),
        )
    except (KeyError, TypeError) as exc:
        raise StoreSchemaError(f"bad world record: {exc}") from exc


def trajectory_to_dict(traj: Trajectory, run_id: str = "", strategy: str = "") -> dict:
    # mode says how the run was executed; strategy records which configured
    # pipeline produced it (several compressed strategies can share a run dir).
    return {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "workflow_id": traj.workflow_id,
        "mode": traj.mode,
        "strategy": strategy or traj.mode,
        "final_answer": traj.final_answer,
        "truncated": traj.truncated,
        "poisoned": traj.poisoned,
        "per_step": [
            {
                "step": r.step,
                "context_tokens": r.context_tokens,
                "digest": r.digest,
                "agent_output": r.agent_output,
                "tool_results": list(r.tool_results),
            }
            for r in traj.per_step
        ],
        "compression_records": [
            {
                "step": r.step,
                "k": r.k,
                "plan_slice": r.plan_slice,
                "original_tokens": r.original_tokens,
                "compressed_tokens": r.compressed_tokens,
                "ratio": r.ratio,
                "prompt_id": r.prompt_id,
                "compressed_empty": r.compressed_empty,
                "context_text": r.context_text,
                "target_text": r.target_text,
            }
            for r in traj.compression_records
        ],
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    try:
        return Trajectory(
            workflow_id=data["workflow_id"],
            mode=data["mode"],
            per_step=tuple(
                StepRecord(
                    step=r["step"],
                    context_tokens=r["context_tokens"],
                    digest=r["digest"],
                    agent_output=r["agent_output"],
                    tool_results=tuple(r["tool_results"]),
                )
                for r in data["per_step"]
            ),
            final_answer=data["final_answer"],
            compression_records=tuple(
                CompressionRecord(
                    step=r["step"],
                    k=r["k"],
                    plan_slice=r["plan_slice"],
                    original_tokens=r["original_tokens"],
                    compressed_tokens=r["compressed_tokens"],
                    ratio=r["ratio"],
                    prompt_id=r["prompt_id"],
                    compressed_empty=r["compressed_empty"],
                    context_text=r["context_text"],
                    target_text=r["target_text"],
                )
                for r in data["compression_records"]
            ),
            truncated=data["truncated"],
            poisoned=data["poisoned"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreSchemaError(f"bad trajectory record: {exc}") from exc


def label_to_dict(
    workflow_id: str, strategy: str, label: SuccessLabel, run_id: str = ""
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "workflow_id": workflow_id,
        "strategy": strategy,
        "success": label.success,
        "equivalence_s": label.equivalence_s,
        "judge": label.judge,
        "per_step_ratios": list(label.per_step_ratios),
        "failure_reasons": sorted(label.failure_reasons),
    }


def label_from_dict(data: dict) -> tuple[str, str, SuccessLabel]:
    try:
        label = SuccessLabel(
            success=data["success"],
            equivalence_s=data["equivalence_s"],
            judge=data["judge"],
            per_step_ratios=tuple(data["per_step_ratios"]),
            failure_reasons=frozenset(data["failure_reasons"]),
        )
        return data["workflow_id"], data["strategy"], label
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreSchemaError(f"bad label record: {exc}") from exc


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


class RunDirectory:
    """Filesystem layout for one pipeline run."""

    CONFIG = "config.json"
    CORPUS = "corpus.jsonl"
    TRAJECTORIES = "trajectories.jsonl"
    LABELS = "labels.jsonl"
    DATASET = "dataset.jsonl"
    EVOLUTION = "evolution"
    REPORT_JSON = "report.json"
    REPORT_TXT = "report.txt"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    @classmethod
    def create(cls, path: str | Path, config: dict) -> "RunDirectory":
        """Initialize the directory; the config snapshot lands before any result."""
        run = cls(path)
        run.path.mkdir(parents=True, exist_ok=True)
        snapshot = dict(config)
        snapshot.setdefault("run_id", config_digest(config))
        snapshot.setdefault("schema_version", SCHEMA_VERSION)
        (run.path / cls.CONFIG).write_text(
            json.dumps(snapshot, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return run

    def config(self) -> dict:
        path = self.path / self.CONFIG
        if not path.exists():
            raise StoreSchemaError(f"missing config snapshot {path}")
        return json.loads(path.read_text(encoding="utf-8"))

    @property
    def run_id(self) -> str:
        return self.config().get("run_id", "")

    def file(self, name: str) -> Path:
        return self.path / name

    def append(self, name: str, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with (self.path / name).open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def read(self, name: str) -> list[dict]:
        """Read a JSONL log, tolerating a torn final line from a crash."""
        path = self.path / name
        if not path.exists():
            return []
        records = []
        lines = path.read_text(encoding="utf-8").splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if i == len(lines) - 1:
                    break  # interrupted write; prefix remains valid
                raise StoreSchemaError(f"{name} line {i + 1}: malformed JSON") from exc
        return records

    def completed(self, name: str = TRAJECTORIES) -> set[tuple[str, str]]:
        """(workflow_id, strategy) pairs already logged; used for resumption."""
        return {
            (r.get("workflow_id", ""), r.get("strategy") or r.get("mode", ""))
            for r in self.read(name)
        }
