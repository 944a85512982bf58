"""Distillation supervision: tuple extraction and JSONL dataset files.

The dataset schema here is the contract with the external trainer: one JSON
object per line with snake_case fields and an explicit schema_version, plus a
sibling manifest file. Concatenating two valid dataset files yields a valid
dataset file.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

from .model import TrajectoryPair
from .scoring import SuccessLabel

SCHEMA_VERSION = 1


class DatasetSchemaError(Exception):
    """Raised when a dataset file does not match the expected schema."""


@dataclass(frozen=True)
class SupervisionTuple:
    """One training example: (plan slice, context) maps to compressed context."""

    workflow_id: str
    step: int
    k: int
    plan_slice: str
    context: str
    target: str
    ratio: float
    equivalence: float
    prompt_id: str

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"ratio must be in (0,1), got {self.ratio}")
        if not self.target.strip():
            raise ValueError("target must be non-empty")


@dataclass(frozen=True)
class DatasetManifest:
    count: int
    mean_ratio: float
    mean_equivalence: float
    k_distribution: dict[str, int]
    source_run_ids: tuple[str, ...]
    schema_version: int = SCHEMA_VERSION


def extract_tuples(pair: TrajectoryPair, label: SuccessLabel) -> list[SupervisionTuple]:
    """One tuple per compression step of a successful pair; none otherwise."""
    if not label.success:
        return []
    return [
        SupervisionTuple(
            workflow_id=pair.workflow_id,
            step=rec.step,
            k=rec.k,
            plan_slice=rec.plan_slice,
            context=rec.context_text,
            target=rec.target_text,
            ratio=rec.ratio,
            equivalence=label.equivalence_s,
            prompt_id=rec.prompt_id,
        )
        for rec in pair.records
        if rec.valid
    ]


def manifest_path(dataset_path: str | Path) -> Path:
    path = Path(dataset_path)
    return path.with_name(path.stem + ".manifest.json")


def _build_manifest(tuples: list[SupervisionTuple], source_run_ids) -> DatasetManifest:
    n = len(tuples)
    k_dist = Counter(str(t.k) for t in tuples)
    return DatasetManifest(
        count=n,
        mean_ratio=sum(t.ratio for t in tuples) / n if n else 0.0,
        mean_equivalence=sum(t.equivalence for t in tuples) / n if n else 0.0,
        k_distribution=dict(sorted(k_dist.items())),
        source_run_ids=tuple(source_run_ids),
    )


def write_dataset(
    tuples: list[SupervisionTuple],
    path: str | Path,
    source_run_ids: tuple[str, ...] = (),
) -> DatasetManifest:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for t in tuples:
            record = {"schema_version": SCHEMA_VERSION, **asdict(t)}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    manifest = _build_manifest(tuples, source_run_ids)
    manifest_record = asdict(manifest)
    manifest_record["source_run_ids"] = list(manifest.source_run_ids)
    manifest_path(path).write_text(
        json.dumps(manifest_record, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return manifest


_FIELDS = (
    "workflow_id", "step", "k", "plan_slice", "context", "target",
    "ratio", "equivalence", "prompt_id",
)


def read_dataset(path: str | Path) -> list[SupervisionTuple]:
    tuples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetSchemaError(f"line {lineno}: malformed JSON ({exc})") from exc
            version = record.get("schema_version")
            if version != SCHEMA_VERSION:
                raise DatasetSchemaError(
                    f"line {lineno}: schema_version {version!r}, expected {SCHEMA_VERSION}"
                )
            missing = [f for f in _FIELDS if f not in record]
            if missing:
                raise DatasetSchemaError(f"line {lineno}: missing fields {missing}")
            try:
                tuples.append(SupervisionTuple(**{f: record[f] for f in _FIELDS}))
            except (TypeError, ValueError) as exc:
                raise DatasetSchemaError(f"line {lineno}: {exc}") from exc
    return tuples


def dedup_tuples(tuples: list[SupervisionTuple]) -> list[SupervisionTuple]:
    """Drop exact (plan_slice, context, target) duplicates, keeping highest s."""
    best: dict[tuple[str, str, str], tuple[int, SupervisionTuple]] = {}
    for i, t in enumerate(tuples):
        key = (t.plan_slice, t.context, t.target)
        if key not in best or t.equivalence > best[key][1].equivalence:
            first_index = best[key][0] if key in best else i
            best[key] = (first_index, t)
    return [t for _, t in sorted(best.values(), key=lambda p: p[0])]
