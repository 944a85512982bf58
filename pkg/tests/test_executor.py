"""Execution regimes: plan slicing, context updates, full and compressed runs."""

import pytest

from paace.backends import MISSING_FACT, ScriptedAgentBackend
from paace.executor import (
    IdentityCompressor,
    OracleRuleCompressor,
    plan_slice,
    run_compressed,
    run_full,
    run_pair,
    update_context,
)
from paace.model import (
    ContextState,
    Plan,
    RunConfig,
    TaskStep,
    ToolResult,
    render_context,
    token_count,
)
from paace.synth import GeneratorConfig, generate_workflow


def ten_step_plan():
    steps = [TaskStep(id=i, instruction=f"Look up the value of 'k{i}'.") for i in range(1, 10)]
    steps.append(TaskStep(
        id=10, instruction="Report the final answer: the sum of the results of steps 8 and 9.",
        depends_on=frozenset({8, 9}), kind="answer",
    ))
    return Plan(steps=tuple(steps))


class TestPlanSlice:
    def test_window_is_current_plus_next(self):
        text = plan_slice(ten_step_plan(), t=4, k=2)
        assert "Step 4 " in text and "Step 5 " in text
        assert "Step 3 " not in text and "Step 6 " not in text

    def test_clipped_at_plan_end(self):
        text = plan_slice(ten_step_plan(), t=9, k=3)
        assert "Step 9 " in text and "Step 10 " in text
        assert "Step 8 " not in text

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            plan_slice(ten_step_plan(), t=0, k=2)
        with pytest.raises(ValueError):
            plan_slice(ten_step_plan(), t=11, k=2)
        with pytest.raises(ValueError):
            plan_slice(ten_step_plan(), t=1, k=0)

    def test_dependency_annotations_restricted_to_slice(self):
        # Step 10 depends on 8 and 9; with t=10, k=1 neither is in the slice.
        text = plan_slice(ten_step_plan(), t=10, k=1)
        assert "(after:" not in text
        # The instruction text still names the out-of-slice steps.
        assert "steps 8 and 9" in text

    def test_whole_plan_conditioning_when_k_covers_plan(self):
        plan = ten_step_plan()
        assert plan_slice(plan, 1, len(plan)) == plan.description


class TestUpdateContext:
    def test_appends_history_and_observations_in_order(self):
        c = ContextState(history=("h1",), observations=("o1",), step=3)
        out = update_context(c, "h2", [ToolResult(payload="o2"), ToolResult(payload="o3")])
        assert out.history == ("h1", "h2")
        assert out.observations == ("o1", "o2", "o3")
        assert out.step == 4

    def test_empty_tool_results_only_history_grows(self):
        c = ContextState(observations=("o1",))
        out = update_context(c, "h1", [])
        assert out.observations == c.observations
        assert out.history == ("h1",)

    def test_token_count_strictly_increases_for_non_empty_output(self):
        c = ContextState(system_prompt="sys")
        out = update_context(c, "the agent did a thing", [])
        assert token_count(render_context(out)) > token_count(render_context(c))

    def test_other_fields_unchanged(self):
        c = ContextState(initial_input="i", system_prompt="p", plan_text="plan", memory=("m",))
        out = update_context(c, "h", [ToolResult(payload="o")])
        assert (out.initial_input, out.system_prompt, out.plan_text, out.memory) == (
            "i", "p", "plan", ("m",)
        )


class TestRunFull:
    def test_reproduces_gold_answer(self, agent):
        wf, world = generate_workflow(3)
        traj = run_full(wf, world, agent)
        assert traj.final_answer == wf.gold_answer
        assert not traj.truncated

    def test_records_every_step(self, agent):
        wf, world = generate_workflow(3)
        traj = run_full(wf, world, agent)
        assert traj.steps == len(wf.plan)
        assert traj.mode == "full"
        assert traj.compression_records == ()

    def test_context_growth_is_monotone(self, agent):
        wf, world = generate_workflow(3)
        series = run_full(wf, world, agent).context_token_series()
        assert all(a <= b for a, b in zip(series, series[1:]))

    def test_step_budget_truncates_runaway_runs(self):
        class SilentAgent:
            def complete(self, request):
                return ScriptedAgentBackend().complete(request)

        wf, world = generate_workflow(3)
        cfg = RunConfig(k=2, token_budget=1)
        traj = run_full(wf, world, SilentAgent(), cfg)
        assert traj.truncated
        assert traj.final_answer == ""


class TestRunCompressed:
    def test_identity_compressor_reproduces_full_run(self, agent, run_cfg):
        wf, world = generate_workflow(9)
        full = run_full(wf, world, agent, run_cfg)
        compressed, records = run_compressed(
            wf, world, agent, IdentityCompressor(), run_cfg
        )
        assert compressed.final_answer == full.final_answer
        assert compressed.context_token_series() == full.context_token_series()
        # Identity means no shrink: every ratio is exactly 1 and thus invalid.
        assert all(r.ratio == 1.0 and not r.valid for r in records)

    def test_oracle_rule_keeps_gold_and_shrinks(self, agent, run_cfg):
        for seed in range(10):
            wf, world = generate_workflow(seed)
            traj, records = run_compressed(
                wf, world, agent, OracleRuleCompressor(), run_cfg
            )
            assert traj.final_answer == wf.gold_answer, f"seed {seed}"
            assert len(records) == len(wf.plan)
            assert all(rec.valid for rec in records), f"seed {seed}"

    def test_one_record_per_step_with_slice_and_texts(self, agent, run_cfg):
        wf, world = generate_workflow(4)
        _, records = run_compressed(wf, world, agent, OracleRuleCompressor(), run_cfg)
        for rec in records:
            assert rec.k == run_cfg.k
            assert f"Step {rec.step} " in rec.plan_slice
            assert rec.context_text and rec.target_text
            assert rec.original_tokens == token_count(rec.context_text)
            assert rec.compressed_tokens == token_count(rec.target_text)

    def test_mode_tags_by_compressor_name(self, agent, run_cfg):
        wf, world = generate_workflow(4)
        traj, _ = run_compressed(wf, world, agent, OracleRuleCompressor(), run_cfg)
        assert traj.mode == "compressed"

    def test_none_compression_poisons_run_and_falls_back(self, agent, run_cfg):
        class FailingCompressor:
            name = "teacher"
            prompt_id = "pX"

            def compress(self, state, slice_text):
                return None

        wf, world = generate_workflow(4)
        traj, records = run_compressed(wf, world, agent, FailingCompressor(), run_cfg)
        assert traj.poisoned
        assert all(rec.compressed_empty and not rec.valid for rec in records)
        # Fallback to the uncompressed context keeps the run correct.
        assert traj.final_answer == wf.gold_answer


class TestLookaheadAblation:
    def gap_cfg(self, d):
        return GeneratorConfig(min_steps=max(5, d + 3), max_steps=d + 5,
                               dep_gap_min=d, dep_gap_max=d)

    def run_k(self, seed, d, k, agent):
        wf, world = generate_workflow(seed, self.gap_cfg(d))
        traj, _ = run_compressed(
            wf, world, agent, OracleRuleCompressor(), RunConfig(k=k)
        )
        return wf, traj

    def test_k1_drops_facts_consumed_two_steps_later(self, agent):
        # d=2 dependencies sit outside a k=1 slice at acquisition time.
        hit = 0
        for seed in range(10):
            wf, traj = self.run_k(seed, d=2, k=1, agent=agent)
            outputs = [rec.agent_output for rec in traj.per_step] + [traj.final_answer]
            if any(MISSING_FACT in out for out in outputs):
                hit += 1
        assert hit > 0

    def test_k2_covers_the_same_corpus(self, agent):
        for seed in range(10):
            wf, traj = self.run_k(seed, d=2, k=2, agent=agent)
            assert traj.final_answer == wf.gold_answer, f"seed {seed}"


class TestRunPair:
    def test_pair_bundles_both_regimes(self, make_pair, oracle_compressor):
        pair = make_pair(6, oracle_compressor)
        assert pair.full.mode == "full"
        assert pair.compressed.mode == "compressed"
        assert pair.records == pair.compressed.compression_records
        assert pair.gold_answer is not None
        assert "GOLD:" in pair.workflow_desc


class TestRegimeEquivalence:
    def test_identity_equivalence_over_seeds(self, agent):
        cfg = RunConfig(k=2)
        for seed in (0, 5, 17):
            wf, world = generate_workflow(seed)
            pair = run_pair(wf, world, agent, IdentityCompressor(), cfg)
            assert pair.full.final_answer == pair.compressed.final_answer
            assert [r.digest for r in pair.full.per_step] == [
                r.digest for r in pair.compressed.per_step
            ]
