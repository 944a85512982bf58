"""Steady-state asynchronous evolution of the teacher's compression prompt.

A single registry owns the population and all statistics; stateless workers
lease (variant, seed batch) assignments, evaluate them, and post results.
Selection runs periodically inside the registry: top variants spawn mutated
children, the worst beyond the population cap are evicted, elites are immune.
With one worker and seeded mocks the whole run is bit-reproducible.
"""

from __future__ import annotations

import json
import math
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .backends import BASE_TEACHER_PROMPT, DIRECTIVE_LIBRARY


@dataclass(frozen=True)
class PromptVariant:
    prompt_id: str
    text: str
    parent_id: str | None = None
    created_at: int = 0  # generation index, not wall time

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("prompt text must be non-empty")


@dataclass(frozen=True)
class EvalOutcome:
    """What one (prompt, seed) evaluation produced."""

    success: bool
    s: float  # semantic equivalence of the pair
    r: float  # mean per-step compression ratio


@dataclass
class VariantStats:
    """Evaluation statistics for one variant.

    Outcomes are kept as lists and aggregated with math.fsum, so the final
    stats do not depend on the order results arrived in.
    """

    outcomes: list[EvalOutcome] = field(default_factory=list)

    @property
    def n_evals(self) -> int:
        return len(self.outcomes)

    @property
    def n_success(self) -> int:
        return sum(1 for o in self.outcomes if o.success)

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_evals if self.n_evals else 0.0

    @property
    def mean_s(self) -> float:
        ss = [o.s for o in self.outcomes if o.success]
        return math.fsum(ss) / len(ss) if ss else 0.0

    @property
    def mean_r(self) -> float:
        rs = [o.r for o in self.outcomes if o.success]
        return math.fsum(rs) / len(rs) if rs else 0.0


def reward(stats: VariantStats) -> float:
    """success_rate x mean_s x (1 - mean_r); zero without any success."""
    if stats.n_evals == 0:
        raise ValueError("reward undefined before any evaluation")
    if stats.n_success == 0:
        return 0.0
    return stats.success_rate * stats.mean_s * (1.0 - stats.mean_r)


def composite_score(
    population: list[tuple[PromptVariant, VariantStats]], min_evals: int = 5
) -> list[tuple[str, float]]:
    """Rank-mean selection score; lower is better.

    Each sufficiently evaluated variant is ranked independently by reward,
    success rate, and mean equivalence (descending) and mean ratio
    (ascending); the composite is the mean of the four 1-based rank
    positions. All ties break by prompt_id so the ranking is deterministic.
    """
    ranked = [(v, s) for v, s in population if s.n_evals >= min_evals]
    if not ranked:
        return []
    positions: dict[str, list[int]] = {v.prompt_id: [] for v, _ in ranked}
    keys: list[Callable[[tuple[PromptVariant, VariantStats]], tuple]] = [
        lambda p: (-reward(p[1]), p[0].prompt_id),
        lambda p: (-p[1].success_rate, p[0].prompt_id),
        lambda p: (-p[1].mean_s, p[0].prompt_id),
        lambda p: (p[1].mean_r, p[0].prompt_id),
    ]
    for key in keys:
        for position, (variant, _) in enumerate(sorted(ranked, key=key), start=1):
            positions[variant.prompt_id].append(position)
    scores = [(pid, math.fsum(ps) / len(ps)) for pid, ps in positions.items()]
    scores.sort(key=lambda p: (p[1], p[0]))
    return scores


def propose_prompt_mutation(
    rng: random.Random,
    parent: PromptVariant,
    n: int | None = 1,
    directives: tuple[str, ...] = DIRECTIVE_LIBRARY,
) -> list[str]:
    """n candidate child texts, each one single-directive edit off the parent.

    Appends of absent directives are preferred over removals of present ones;
    candidates are distinct from each other and never the parent verbatim.
    n=None draws every possible edit in seeded order.
    """
    appends = [
        parent.text + f"\n- {d}" for d in directives if d not in parent.text
    ]
    removals = []
    for d in directives:
        if d in parent.text:
            lines = [
                ln for ln in parent.text.splitlines()
                if ln.strip() not in (d, f"- {d}")
            ]
            child = "\n".join(lines)
            removals.append(child if child.strip() else BASE_TEACHER_PROMPT)
    pool = appends or removals
    if n is None:
        n = len(pool)
    if not 0 < n <= len(pool):
        raise ValueError(f"asked for {n} mutations, only {len(pool)} distinct edits")
    return rng.sample(pool, n)


@dataclass(frozen=True)
class Lease:
    lease_id: int
    worker_id: str
    prompt_id: str
    prompt_text: str
    seeds: tuple[int, ...]
    issued_at: float
    deadline: float


@dataclass(frozen=True)
class EvolveConfig:
    population_cap: int = 32
    elitism: int = 4
    min_evals: int = 5
    batch_size: int = 4
    eval_budget: int = 200
    selection_interval: int = 8  # results between selection rounds
    seed: int = 0
    seed_pool_size: int = 16
    workers: int = 1
    lease_ttl: float = 300.0
    resample_seeds: bool = False  # False: all variants share one seed pool

    def __post_init__(self) -> None:
        if self.population_cap < 1 or self.elitism < 0 or self.elitism > self.population_cap:
            raise ValueError("bad population_cap/elitism")
        if min(self.min_evals, self.batch_size, self.eval_budget,
               self.selection_interval, self.seed_pool_size, self.workers) < 1:
            raise ValueError("counts must be >= 1")


class Registry:
    """Serializes every stat update, lease grant, and selection decision.

    A logical clock (injectable for determinism) drives lease deadlines;
    expired leases are reissued to the next requesting worker. Duplicate
    posts for the same (lease, seed) are ignored, so at-least-once execution
    by crashing workers cannot double-count.
    """

    def __init__(
        self,
        seed_prompts: list[str],
        config: EvolveConfig,
        directives: tuple[str, ...] = DIRECTIVE_LIBRARY,
        clock: Callable[[], float] | None = None,
    ):
        if not seed_prompts:
            raise ValueError("seed population must be non-empty")
        self.config = config
        self.directives = directives
        self._lock = threading.Lock()
        self._rng = random.Random(config.seed)
        self._logical_time = 0.0
        self._clock = clock or self._tick
        self.variants: dict[str, PromptVariant] = {}
        self.stats: dict[str, VariantStats] = {}
        self.evicted: dict[str, PromptVariant] = {}
        self.evicted_stats: dict[str, VariantStats] = {}
        self._next_id = 0
        self._next_lease = 0
        self._generation = 0
        self._posted: set[tuple[int, int]] = set()
        self._results_since_selection = 0
        self._evals_done = 0
        self._evals_assigned: dict[str, int] = {}
        self._active: dict[int, Lease] = {}
        self._seed_pool = [self._rng.randrange(2**31) for _ in range(config.seed_pool_size)]
        self._seed_cursor: dict[str, int] = {}
        for text in seed_prompts:
            self._add_variant(text, parent_id=None)

    def _tick(self) -> float:
        self._logical_time += 1.0
        return self._logical_time

    def _add_variant(self, text: str, parent_id: str | None) -> PromptVariant:
        variant = PromptVariant(
            prompt_id=f"p{self._next_id:04d}",
            text=text,
            parent_id=parent_id,
            created_at=self._generation,
        )
        self._next_id += 1
        self.variants[variant.prompt_id] = variant
        self.stats[variant.prompt_id] = VariantStats()
        self._evals_assigned[variant.prompt_id] = 0
        self._seed_cursor[variant.prompt_id] = 0
        return variant

    @property
    def evals_done(self) -> int:
        with self._lock:
            return self._evals_done

    def request_lease(self, worker_id: str) -> Lease | None:
        """Pick the variant most in need of evaluation and lease it a batch.

        Preference: reclaim expired leases first, then variants below
        min_evals (least evaluated first), then the best-ranked variant.
        Ties break by prompt_id.
        """
        with self._lock:
            now = self._clock()
            expired = [l for l in self._active.values() if l.deadline < now]
            for lease in expired:
                del self._active[lease.lease_id]
                if lease.prompt_id in self.variants:
                    return self._issue(worker_id, lease.prompt_id, lease.seeds, now)

            pending = self._evals_done + sum(len(l.seeds) for l in self._active.values())
            remaining = self.config.eval_budget - pending
            if remaining <= 0:
                return None

            under = sorted(
                (pid for pid, st in self.stats.items()
                 if self._evals_assigned[pid] < self.config.min_evals),
                key=lambda pid: (self._evals_assigned[pid], pid),
            )
            if under:
                # Size the lease to what the variant still needs; overshooting
                # min_evals starves the rest of the newcomer queue.
                pid = under[0]
                need = self.config.min_evals - self._evals_assigned[pid]
                batch = min(self.config.batch_size, need, remaining)
            else:
                scores = composite_score(
                    [(self.variants[p], self.stats[p]) for p in self.variants],
                    self.config.min_evals,
                )
                pid = scores[0][0] if scores else sorted(self.variants)[0]
                batch = min(self.config.batch_size, remaining)
            seeds = self._draw_seeds(pid, batch)
            return self._issue(worker_id, pid, seeds, now)

    def _draw_seeds(self, prompt_id: str, n: int) -> tuple[int, ...]:
        if self.config.resample_seeds:
            return tuple(self._rng.randrange(2**31) for _ in range(n))
        cursor = self._seed_cursor[prompt_id]
        seeds = tuple(
            self._seed_pool[(cursor + i) % len(self._seed_pool)] for i in range(n)
        )
        self._seed_cursor[prompt_id] = cursor + n
        return seeds

    def _issue(self, worker_id: str, prompt_id: str, seeds: tuple[int, ...], now: float) -> Lease:
        lease = Lease(
            lease_id=self._next_lease,
            worker_id=worker_id,
            prompt_id=prompt_id,
            prompt_text=self.variants[prompt_id].text,
            seeds=seeds,
            issued_at=now,
            deadline=now + self.config.lease_ttl,
        )
        self._next_lease += 1
        self._active[lease.lease_id] = lease
        self._evals_assigned[prompt_id] = self._evals_assigned.get(prompt_id, 0) + len(seeds)
        return lease

    def post_result(self, lease: Lease, seed: int, outcome: EvalOutcome) -> bool:
        """Record one evaluation; idempotent per (lease, seed)."""
        with self._lock:
            key = (lease.lease_id, seed)
            if key in self._posted:
                return False
            self._posted.add(key)
            stats = self.stats.get(lease.prompt_id) or self.evicted_stats.get(lease.prompt_id)
            if stats is None:
                raise ValueError(f"unknown prompt_id {lease.prompt_id}")
            stats.outcomes.append(outcome)
            self._evals_done += 1
            self._results_since_selection += 1
            if lease.lease_id in self._active:
                done = sum(1 for (lid, _) in self._posted if lid == lease.lease_id)
                if done >= len(lease.seeds):
                    del self._active[lease.lease_id]
            if self._results_since_selection >= self.config.selection_interval:
                self._results_since_selection = 0
                self._select_locked()
            return True

    def _select_locked(self) -> None:
        cfg = self.config
        self._generation += 1
        scores = composite_score(
            [(self.variants[p], self.stats[p]) for p in self.variants], cfg.min_evals
        )
        if not scores:
            return
        elites = [pid for pid, _ in scores[: cfg.elitism]]
        existing = {v.text for v in self.variants.values()} | {
            v.text for v in self.evicted.values()
        }
        for pid in elites:
            # Draw every possible single edit in seeded order and take the
            # first that is not already in the population; a duplicate child
            # would waste the selection slot.
            try:
                candidates = propose_prompt_mutation(
                    self._rng, self.variants[pid], n=None, directives=self.directives
                )
            except ValueError:
                continue
            for child_text in candidates:
                if child_text not in existing:
                    self._add_variant(child_text, parent_id=pid)
                    existing.add(child_text)
                    break

        if len(self.variants) <= cfg.population_cap:
            return
        ranked_ids = [pid for pid, _ in scores]
        unranked = [pid for pid in self.variants if pid not in set(ranked_ids)]
        # Survival order: elites, then unproven newcomers, then the rest by
        # composite; everything past the cap is evicted.
        survivors = elites + [p for p in unranked if p not in elites]
        survivors += [p for p in ranked_ids if p not in survivors]
        for pid in survivors[cfg.population_cap:]:
            self.evicted[pid] = self.variants.pop(pid)
            self.evicted_stats[pid] = self.stats.pop(pid)

    def snapshot(self) -> list[tuple[PromptVariant, VariantStats, bool]]:
        with self._lock:
            rows = [(v, self.stats[pid], True) for pid, v in self.variants.items()]
            rows += [(v, self.evicted_stats[pid], False) for pid, v in self.evicted.items()]
            rows.sort(key=lambda r: r[0].prompt_id)
            return rows

    def best(self) -> tuple[PromptVariant, VariantStats]:
        with self._lock:
            scores = composite_score(
                [(self.variants[p], self.stats[p]) for p in self.variants],
                self.config.min_evals,
            )
            if scores:
                pid = scores[0][0]
            else:  # nothing fully evaluated yet: most successes wins
                pid = sorted(
                    self.stats,
                    key=lambda p: (-self.stats[p].n_success, -self.stats[p].n_evals, p),
                )[0]
            return self.variants[pid], self.stats[pid]


Evaluator = Callable[[str, int], EvalOutcome]


def _worker_loop(registry: Registry, worker_id: str, evaluator: Evaluator) -> None:
    while True:
        lease = registry.request_lease(worker_id)
        if lease is None:
            return
        for seed in lease.seeds:
            outcome = evaluator(lease.prompt_text, seed)
            registry.post_result(lease, seed, outcome)


def evolve(
    config: EvolveConfig,
    evaluator: Evaluator,
    seed_prompts: list[str] | None = None,
    directives: tuple[str, ...] = DIRECTIVE_LIBRARY,
    clock: Callable[[], float] | None = None,
) -> tuple[PromptVariant, Registry]:
    """Run the evolution loop to budget exhaustion; returns best + registry."""
    if config.workers > 1 and clock is None:
        clock = time.monotonic
    registry = Registry(
        seed_prompts or [BASE_TEACHER_PROMPT], config, directives, clock=clock
    )
    if config.workers == 1:
        _worker_loop(registry, "w0", evaluator)
    else:
        threads = [
            threading.Thread(
                target=_worker_loop, args=(registry, f"w{i}", evaluator), daemon=True
            )
            for i in range(config.workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    best, _ = registry.best()
    return best, registry


def write_archive(registry: Registry, directory: str | Path) -> Path:
    """Archive every variant (alive and evicted) plus a summary; no wall times."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    archive_path = directory / "archive.jsonl"
    rows = registry.snapshot()
    with archive_path.open("w", encoding="utf-8") as fh:
        for variant, stats, alive in rows:
            record = {
                "prompt_id": variant.prompt_id,
                "text": variant.text,
                "parent_id": variant.parent_id,
                "created_at": variant.created_at,
                "alive": alive,
                "n_evals": stats.n_evals,
                "n_success": stats.n_success,
                "success_rate": stats.success_rate,
                "mean_s": stats.mean_s,
                "mean_r": stats.mean_r,
                "reward": reward(stats) if stats.n_evals else 0.0,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    best, best_stats = registry.best()
    summary = {
        "best_prompt_id": best.prompt_id,
        "best_text": best.text,
        "best_reward": reward(best_stats) if best_stats.n_evals else 0.0,
        "evals_done": registry.evals_done,
        "population": sum(1 for _, _, alive in rows if alive),
        "evicted": sum(1 for _, _, alive in rows if not alive),
    }
    (directory / "summary.json").write_text(
        json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return archive_path
