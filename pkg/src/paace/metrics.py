"""Context-efficiency and accuracy metrics, plus the comparison report.

Peak is the largest context the agent ever saw; dependency cost is the sum of
per-step context sizes (the attention load a quadratic-attention model would
pay), reported in millions of tokens.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass

from .model import Trajectory


def peak(traj: Trajectory) -> int:
    series = traj.context_token_series()
    if not series:
        raise ValueError("peak is undefined for an empty trajectory")
    return max(series)


def dependency(traj: Trajectory) -> float:
    series = traj.context_token_series()
    if not series:
        raise ValueError("dependency is undefined for an empty trajectory")
    return sum(series) / 1_000_000


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def em(pred: str, gold: str) -> int:
    return int(_normalize(pred) == _normalize(gold))


def f1(pred: str, gold: str) -> float:
    pred_tokens = _normalize(pred).split()
    gold_tokens = _normalize(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = 0
    remaining = {}
    for tok in gold_tokens:
        remaining[tok] = remaining.get(tok, 0) + 1
    for tok in pred_tokens:
        if remaining.get(tok, 0) > 0:
            remaining[tok] -= 1
            common += 1
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalCase:
    """One finished trajectory plus what it should have answered."""

    trajectory: Trajectory
    gold: str
    corpus_id: str
    stratum: str = ""


@dataclass(frozen=True)
class StrategyRow:
    strategy: str
    n: int
    acc: float  # exact-match rate against gold
    f1: float
    steps: float  # mean executed steps
    peak: float  # mean of per-trajectory max context tokens
    dep: float  # mean of per-trajectory cumulative context, millions of tokens
    acc_std: float = 0.0  # std of acc across strata, 0 if one stratum


@dataclass(frozen=True)
class RunReport:
    corpus_id: str
    config_digest: str
    rows: tuple[StrategyRow, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "corpus_id": self.corpus_id,
                "config_digest": self.config_digest,
                "rows": [asdict(r) for r in self.rows],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "RunReport":
        data = json.loads(text)
        return RunReport(
            corpus_id=data["corpus_id"],
            config_digest=data["config_digest"],
            rows=tuple(StrategyRow(**row) for row in data["rows"]),
        )

    def render_table(self) -> str:
        header = (
            f"{'strategy':<18} {'n':>5} {'acc':>7} {'f1':>7} "
            f"{'steps':>7} {'peak (tok)':>11} {'dep (Mtok)':>11}"
        )
        lines = [f"corpus: {self.corpus_id}  config: {self.config_digest}", header,
                 "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.strategy:<18} {r.n:>5} {r.acc:>7.3f} {r.f1:>7.3f} "
                f"{r.steps:>7.1f} {r.peak:>11.1f} {r.dep:>11.6f}"
            )
        return "\n".join(lines)


def build_report(
    cases_by_strategy: dict[str, list[EvalCase]], config_digest: str = ""
) -> RunReport:
    corpus_ids = {c.corpus_id for cases in cases_by_strategy.values() for c in cases}
    if len(corpus_ids) > 1:
        raise ValueError(f"cases mix corpora: {sorted(corpus_ids)}")
    corpus_id = corpus_ids.pop() if corpus_ids else ""

    rows = []
    for strategy in sorted(cases_by_strategy):
        cases = cases_by_strategy[strategy]
        if not cases:
            continue
        accs = [em(c.trajectory.final_answer, c.gold) for c in cases]
        f1s = [f1(c.trajectory.final_answer, c.gold) for c in cases]
        strata = sorted({c.stratum for c in cases})
        if len(strata) > 1:
            per_stratum = [
                statistics.fmean(
                    em(c.trajectory.final_answer, c.gold)
                    for c in cases if c.stratum == s
                )
                for s in strata
            ]
            acc_std = statistics.pstdev(per_stratum)
        else:
            acc_std = 0.0
        rows.append(StrategyRow(
            strategy=strategy,
            n=len(cases),
            acc=statistics.fmean(accs),
            f1=statistics.fmean(f1s),
            steps=statistics.fmean(c.trajectory.steps for c in cases),
            peak=statistics.fmean(peak(c.trajectory) for c in cases),
            dep=statistics.fmean(dependency(c.trajectory) for c in cases),
            acc_std=acc_std,
        ))
    return RunReport(corpus_id=corpus_id, config_digest=config_digest, rows=tuple(rows))
