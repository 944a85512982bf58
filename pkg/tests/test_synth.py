"""Workflow generator: determinism, solvability, noise separation, tool world."""

import dataclasses

import pytest

from paace.backends import ScriptedAgentBackend, TASK_RE
from paace.executor import run_full
from paace.model import token_count
from paace.synth import (
    GeneratorConfig,
    ToolCall,
    WorldState,
    apply_tool,
    generate_workflow,
    iter_fact_lines,
    oracle_answer,
    style_answer,
)


class TestGeneratorConfig:
    def test_default_valid(self):
        GeneratorConfig().validate()

    def test_bad_step_range(self):
        with pytest.raises(ValueError):
            GeneratorConfig(min_steps=10, max_steps=5).validate()

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            GeneratorConfig(noise_level=1.5).validate()

    def test_gap_must_fit_under_min_steps(self):
        with pytest.raises(ValueError):
            GeneratorConfig(min_steps=2, max_steps=4, dep_gap_max=2).validate()

    def test_bad_answer_style(self):
        with pytest.raises(ValueError):
            GeneratorConfig(answer_style="haiku").validate()


class TestGenerateWorkflow:
    def test_deterministic_for_seed(self):
        a_wf, a_world = generate_workflow(42)
        b_wf, b_world = generate_workflow(42)
        assert a_wf == b_wf
        assert a_world == b_world

    def test_different_seeds_differ(self):
        a_wf, _ = generate_workflow(1)
        b_wf, _ = generate_workflow(2)
        assert a_wf != b_wf

    def test_plan_length_in_configured_range(self):
        for seed in (7, 8, 9, 10):
            wf, _ = generate_workflow(seed)
            assert 5 <= len(wf.plan) <= 30

    def test_zero_noise_input_contains_only_referenced_facts(self):
        cfg = GeneratorConfig(noise_level=0.0, distractor_count=0)
        wf, _ = generate_workflow(11, cfg)
        plan_text = wf.plan.description
        for key, _value in iter_fact_lines(wf.initial_input):
            assert f"'{key}'" in plan_text

    def test_distractor_keys_never_referenced_by_any_step(self):
        wf, _ = generate_workflow(13)
        referenced = {
            key for key, _ in iter_fact_lines(wf.initial_input)
            if f"'{key}'" in wf.plan.description
        }
        all_keys = {key for key, _ in iter_fact_lines(wf.initial_input)}
        distractors = all_keys - referenced
        for step in wf.plan.steps:
            for key in distractors:
                assert f"'{key}'" not in step.instruction

    def test_noise_adds_log_lines(self):
        noisy, _ = generate_workflow(5, GeneratorConfig(noise_level=1.0))
        assert any("[log]" in ln for ln in noisy.initial_input.splitlines())
        clean, _ = generate_workflow(5, GeneratorConfig(noise_level=0.0, distractor_count=0))
        assert not any("[log]" in ln for ln in clean.initial_input.splitlines())

    def test_gold_answer_present_and_matches_oracle(self):
        wf, world = generate_workflow(21)
        assert wf.gold_answer is not None
        assert wf.gold_answer == oracle_answer(wf, world)

    def test_plan_lines_parse_with_shared_task_pattern(self):
        wf, _ = generate_workflow(17)
        for line in wf.plan.description.splitlines():
            assert TASK_RE.match(line), line

    def test_sentence_style_requirement_carries_phrasing_hint(self):
        cfg = GeneratorConfig(answer_style="sentence")
        wf, world = generate_workflow(19, cfg)
        assert "final computed result" in wf.final_requirement
        assert wf.gold_answer == oracle_answer(wf, world)
        assert wf.gold_answer.startswith("the final computed result is ")

    def test_dep_gap_pinning_controls_dependency_distance(self):
        cfg = GeneratorConfig(min_steps=6, max_steps=8, dep_gap_min=3, dep_gap_max=3)
        for seed in range(4):
            wf, _ = generate_workflow(seed, cfg)
            gaps = [
                step.id - dep
                for step in wf.plan.steps
                for dep in step.depends_on
            ]
            assert gaps and all(g == 3 for g in gaps)

    def test_style_answer(self):
        assert style_answer("7", "bare") == "7"
        assert style_answer("7", "sentence") == "the final computed result is 7 units overall"


class TestApplyTool:
    def test_lookup_hit(self):
        world = WorldState(kv={"a": "2"})
        result, after = apply_tool(world, ToolCall(kind="lookup", args={"key": "a"}))
        assert result.payload == "2"
        assert after == world

    def test_lookup_missing(self):
        world = WorldState(kv={"a": "2"})
        result, _ = apply_tool(world, ToolCall(kind="lookup", args={"key": "missing"}))
        assert result.payload == "NOT_FOUND:missing"

    def test_table_sum(self):
        world = WorldState(tables={"t1": [{"x": 1}, {"x": 2}, {"x": 3}]})
        result, _ = apply_tool(world, ToolCall(kind="table_sum", args={"table": "t1", "col": "x"}))
        assert result.payload == "6"

    def test_deterministic(self):
        world = WorldState(kv={"a": "2"})
        call = ToolCall(kind="lookup", args={"key": "a"})
        assert apply_tool(world, call) == apply_tool(world, call)

    def test_write_file_returns_updated_world(self):
        world = WorldState()
        result, after = apply_tool(
            world, ToolCall(kind="write_file", args={"path": "notes.txt", "text": "payload"})
        )
        assert after.files["notes.txt"] == "payload"
        assert world.files == {}

    def test_missing_table_is_not_found_not_crash(self):
        result, _ = apply_tool(
            WorldState(), ToolCall(kind="table_sum", args={"table": "nope", "col": "x"})
        )
        assert result.payload.startswith("NOT_FOUND:")

    def test_result_tokens_default_to_payload_count(self):
        result, _ = apply_tool(
            WorldState(kv={"a": "two words"}), ToolCall(kind="lookup", args={"key": "a"})
        )
        assert result.tokens == token_count(result.payload)


class TestOracleMatchesScriptedAgent:
    def test_oracle_equals_full_context_run_over_100_seeds(self):
        agent = ScriptedAgentBackend()
        for seed in range(100):
            wf, world = generate_workflow(seed)
            traj = run_full(wf, world, agent)
            assert traj.final_answer == wf.gold_answer, (
                f"seed {seed}: agent {traj.final_answer!r} != gold {wf.gold_answer!r}"
            )
