"""Shared fixtures: scripted backends, default configs, and a pair runner."""

import pytest

from paace.backends import (
    DEFAULT_TEACHER_PROMPT,
    HashEmbedder,
    ScriptedAgentBackend,
    ScriptedJudge,
    ScriptedTeacherBackend,
)
from paace.executor import OracleRuleCompressor, PromptCompressor, run_pair
from paace.model import RunConfig
from paace.scoring import Thresholds, label_trajectory
from paace.synth import GeneratorConfig, generate_workflow


@pytest.fixture
def agent():
    return ScriptedAgentBackend()


@pytest.fixture
def judge():
    return ScriptedJudge()


@pytest.fixture
def embedder():
    return HashEmbedder()


@pytest.fixture
def thresholds():
    return Thresholds()


@pytest.fixture
def run_cfg():
    return RunConfig(k=2)


@pytest.fixture
def oracle_compressor():
    return OracleRuleCompressor()


@pytest.fixture
def teacher_compressor():
    return PromptCompressor(
        backend=ScriptedTeacherBackend(),
        prompt=DEFAULT_TEACHER_PROMPT,
        prompt_id="p0",
    )


@pytest.fixture
def gen_cfg():
    return GeneratorConfig()


@pytest.fixture
def make_pair(agent, run_cfg):
    """Run one workflow under full and compressed regimes; returns the pair."""

    def _make(seed, compressor, cfg=None, gcfg=None):
        wf, world = generate_workflow(seed, gcfg or GeneratorConfig())
        return run_pair(wf, world, agent, compressor, cfg or run_cfg)

    return _make


@pytest.fixture
def make_labeled_pair(make_pair, embedder, judge, thresholds):
    def _make(seed, compressor, cfg=None, gcfg=None):
        pair = make_pair(seed, compressor, cfg=cfg, gcfg=gcfg)
        label = label_trajectory(pair, thresholds, judge, embedder)
        return pair, label

    return _make


@pytest.fixture
def build_pair():
    """Hand-assemble a TrajectoryPair with controlled answers and ratios."""
    from paace.model import (
        StepRecord,
        Trajectory,
        TrajectoryPair,
        make_compression_record,
    )

    def _build(
        full_answer,
        comp_answer,
        ratios=(0.5, 0.5),
        gold=None,
        truncated=False,
        poisoned=False,
        empty_steps=(),
        records=None,
    ):
        if records is None:
            records = tuple(
                make_compression_record(
                    i + 1, 2, f"Step {i + 1} [lookup]: Look up the value of 'a'.",
                    1000, round(r * 1000), "p0",
                    compressed_empty=(i + 1) in empty_steps,
                    context_text="## SYSTEM\nctx", target_text="## SYSTEM\nout",
                )
                for i, r in enumerate(ratios)
            )
        per_step = tuple(
            StepRecord(step=i + 1, context_tokens=1000, digest="d", agent_output="v")
            for i in range(max(len(records), 1))
        )
        desc = "Workflow wX: report the combined result.\nPlan has 2 steps."
        if gold is not None:
            desc += f"\nGOLD: {gold}"
        full = Trajectory(
            workflow_id="wX", mode="full", per_step=per_step,
            final_answer=full_answer, truncated=truncated,
        )
        comp = Trajectory(
            workflow_id="wX", mode="compressed", per_step=per_step,
            final_answer=comp_answer, compression_records=records,
            truncated=False, poisoned=poisoned,
        )
        return TrajectoryPair(
            workflow_id="wX", workflow_desc=desc, gold_answer=gold,
            full=full, compressed=comp,
        )

    return _build
