"""Supervision dataset reader and example masking.

The dataset is the JSONL file the pipeline's `paace extract` command writes:
one record per compression step with schema_version, workflow_id, step, k,
plan_slice, context, target, ratio, equivalence, prompt_id. This module
validates that contract independently; it does not import the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from paace_trainer.vocab import Vocab

SCHEMA_VERSION = 1

_REQUIRED = (
    "workflow_id", "step", "k", "plan_slice", "context", "target",
    "ratio", "equivalence", "prompt_id",
)


class DatasetError(Exception):
    """The dataset file violates the published supervision schema."""


@dataclass(frozen=True)
class SupervisionExample:
    workflow_id: str
    step: int
    k: int
    plan_slice: str
    context: str
    target: str
    ratio: float
    equivalence: float
    prompt_id: str


def read_supervision(path: str | Path, limit: int | None = None) -> list[SupervisionExample]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    examples: list[SupervisionExample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON") from exc
            if record.get("schema_version") != SCHEMA_VERSION:
                raise DatasetError(
                    f"line {lineno}: unsupported schema_version "
                    f"{record.get('schema_version')!r}"
                )
            missing = [f for f in _REQUIRED if f not in record]
            if missing:
                raise DatasetError(f"line {lineno}: missing fields {missing}")
            if not 0.0 < record["ratio"] < 1.0:
                raise DatasetError(f"line {lineno}: ratio outside (0,1)")
            examples.append(
                SupervisionExample(**{f: record[f] for f in _REQUIRED})
            )
            if limit is not None and len(examples) >= limit:
                break
    return examples


def example_text_pair(ex: SupervisionExample) -> tuple[str, str]:
    """(x, y) texts: x mirrors the wire layout the student sees at inference
    (upcoming tasks, then the rendered context); y is the compressed context."""
    x = f"## NEXT_TASKS\n{ex.plan_slice}\n## CONTEXT\n{ex.context}"
    return x, ex.target


@dataclass(frozen=True)
class MaskedExample:
    """Next-token arrays for one example.

    input_ids[i] predicts labels[i]; loss_mask[i] is 1.0 only where the
    predicted token belongs to the target region (compressed context + end
    marker). The conditioning region contributes inputs, never loss.
    """

    input_ids: list[int]
    labels: list[int]
    loss_mask: list[float]


def build_masked_example(
    vocab: Vocab, x_text: str, y_text: str, max_len: int
) -> MaskedExample:
    if max_len < 8:
        raise ValueError(f"max_len too small: {max_len}")
    x_ids = vocab.encode(x_text)
    y_ids = vocab.encode(y_text) + [vocab.eos_id]
    budget = max_len - 2  # room for <bos> and <sep>
    if len(y_ids) > budget:
        y_ids = y_ids[:budget]
    x_keep = budget - len(y_ids)
    # Head-first truncation: the most recent conditioning tokens matter most.
    x_ids = x_ids[len(x_ids) - x_keep:] if x_keep > 0 else []
    seq = [vocab.bos_id] + x_ids + [vocab.sep_id] + y_ids
    sep_pos = 1 + len(x_ids)
    input_ids = seq[:-1]
    labels = seq[1:]
    loss_mask = [1.0 if i >= sep_pos else 0.0 for i in range(len(labels))]
    return MaskedExample(input_ids=input_ids, labels=labels, loss_mask=loss_mask)


def collate(examples: list[MaskedExample], pad_id: int) -> dict[str, torch.Tensor]:
    width = max(len(ex.input_ids) for ex in examples)
    input_ids = torch.full((len(examples), width), pad_id, dtype=torch.long)
    labels = torch.full((len(examples), width), pad_id, dtype=torch.long)
    loss_mask = torch.zeros((len(examples), width), dtype=torch.float32)
    for row, ex in enumerate(examples):
        n = len(ex.input_ids)
        input_ids[row, :n] = torch.tensor(ex.input_ids, dtype=torch.long)
        labels[row, :n] = torch.tensor(ex.labels, dtype=torch.long)
        loss_mask[row, :n] = torch.tensor(ex.loss_mask, dtype=torch.float32)
    return {"input_ids": input_ids, "labels": labels, "loss_mask": loss_mask}
