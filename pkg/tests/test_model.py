"""Core type construction, validation, rendering, and token accounting."""

import pytest

from paace.model import (
    SECTION_ORDER,
    CompressionRecord,
    ContextState,
    Plan,
    RunConfig,
    StepRecord,
    TaskStep,
    Trajectory,
    Workflow,
    context_tokens,
    make_compression_record,
    parse_context,
    render_context,
    render_plan,
    token_count,
)


def small_plan():
    return Plan(steps=(
        TaskStep(id=1, instruction="Look up the fact named 'a'.", kind="lookup"),
        TaskStep(id=2, instruction="Look up the fact named 'b'.", kind="lookup"),
        TaskStep(id=3, instruction="Add the results of steps 1 and 2.",
                 depends_on=frozenset({1, 2}), kind="arithmetic"),
    ))


class TestTokenCount:
    def test_empty(self):
        assert token_count("") == 0

    def test_whitespace_words(self):
        assert token_count("a b c") == 3

    def test_additive_over_space_join(self):
        a, b = "x y", "z"
        assert token_count(a + " " + b) == token_count(a) + token_count(b) == 3

    def test_monotone_under_concatenation(self):
        a, b = "one two three", "four five"
        joined = a + " " + b
        assert token_count(joined) >= max(token_count(a), token_count(b))


class TestTaskStepAndPlan:
    def test_id_must_be_positive(self):
        with pytest.raises(ValueError):
            TaskStep(id=0, instruction="x")

    def test_instruction_non_empty(self):
        with pytest.raises(ValueError):
            TaskStep(id=1, instruction="   ")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            TaskStep(id=1, instruction="x", kind="teleport")

    def test_depends_on_earlier_only(self):
        with pytest.raises(ValueError):
            TaskStep(id=2, instruction="x", depends_on=frozenset({2}))
        with pytest.raises(ValueError):
            TaskStep(id=2, instruction="x", depends_on=frozenset({3}))

    def test_plan_requires_contiguous_ids(self):
        steps = (TaskStep(id=1, instruction="x"), TaskStep(id=3, instruction="y"))
        with pytest.raises(ValueError):
            Plan(steps=steps)

    def test_empty_plan_rejected(self):
        with pytest.raises(ValueError):
            Plan(steps=())

    def test_forward_edge_rejected_even_when_hand_built(self):
        # Bypass TaskStep validation to simulate a corrupted deserialized plan.
        good = TaskStep(id=1, instruction="x")
        bad = TaskStep(id=2, instruction="y")
        object.__setattr__(bad, "depends_on", frozenset({2}))
        with pytest.raises(ValueError):
            Plan(steps=(good, bad))

    def test_step_accessor_bounds(self):
        plan = small_plan()
        assert plan.step(1).id == 1
        assert plan.step(3).kind == "arithmetic"
        with pytest.raises(ValueError):
            plan.step(0)
        with pytest.raises(ValueError):
            plan.step(4)

    def test_description_defaults_to_rendering(self):
        plan = small_plan()
        assert plan.description == render_plan(plan.steps)
        assert "Step 3 [arithmetic]" in plan.description
        assert "(after: 1,2)" in plan.description


class TestRenderContext:
    def test_deterministic(self):
        c = ContextState(system_prompt="sys", history=("h1", "h2"))
        assert render_context(c) == render_context(c)

    def test_system_prompt_in_system_section(self):
        c = ContextState(system_prompt="sys")
        text = render_context(c)
        assert "## SYSTEM\nsys" in text

    def test_section_order_fixed_and_always_present(self):
        c = ContextState(system_prompt="p", history=("h",))
        lines = render_context(c).splitlines()
        headers = [ln for ln in lines if ln.startswith("## ")]
        assert headers == [f"## {name}" for name in SECTION_ORDER]

    def test_adding_observation_strictly_increases_tokens(self):
        c = ContextState(system_prompt="sys", observations=("obs one",))
        bigger = c.with_entries(observations=c.observations + ("obs two",))
        assert context_tokens(bigger) > context_tokens(c)

    def test_multiline_entries_flattened(self):
        c = ContextState(history=("line one\nline two",))
        text = render_context(c)
        assert "line one | line two" in text

    def test_parse_round_trip(self):
        c = ContextState(
            initial_input="- fact a = 2\n- fact b = 3",
            system_prompt="You are a careful agent.",
            plan_text="Step 1 [lookup]: get a",
            history=("Step 1 => 2",),
            observations=("Step 1 tool lookup => 2",),
            retrieved=("Step 2 retrieved d1: text",),
            memory=("note",),
            step=3,
        )
        back = parse_context(render_context(c), step=3)
        assert back == c

    def test_parse_tolerates_unknown_headers(self):
        text = "## SYSTEM\nsys\n## WHATEVER\nstray note\n## HISTORY\nh1"
        c = parse_context(text)
        assert c.system_prompt == "sys"
        assert c.history == ("h1",)
        assert "stray note" in c.memory

    def test_parse_collects_preamble_into_memory(self):
        c = parse_context("loose text before any header\n## SYSTEM\nsys")
        assert c.system_prompt == "sys"
        assert any("loose text" in m for m in c.memory)


class TestContextState:
    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            ContextState(step=0)

    def test_sequences_coerced_to_tuples(self):
        c = ContextState(history=["a", "b"])
        assert c.history == ("a", "b")


class TestCompressionRecord:
    def test_ratio_computed(self):
        rec = make_compression_record(1, 2, "slice", 100, 40, "p0")
        assert rec.ratio == pytest.approx(0.4)
        assert rec.valid

    def test_valid_boundary_cases(self):
        assert not make_compression_record(1, 2, "s", 100, 0, "p").valid
        assert not make_compression_record(1, 2, "s", 100, 100, "p").valid
        assert not make_compression_record(1, 2, "s", 100, 150, "p").valid
        assert make_compression_record(1, 2, "s", 100, 99, "p").valid
        assert make_compression_record(1, 2, "s", 100, 1, "p").valid

    def test_empty_flag_invalidates_regardless_of_ratio(self):
        rec = make_compression_record(1, 2, "s", 100, 40, "p", compressed_empty=True)
        assert not rec.valid

    def test_zero_original_rejected(self):
        with pytest.raises(ValueError):
            make_compression_record(1, 2, "s", 0, 0, "p")


class TestTrajectory:
    def test_context_token_series(self):
        per_step = tuple(
            StepRecord(step=i, context_tokens=n, digest="d", agent_output="o")
            for i, n in enumerate([100, 200, 150], start=1)
        )
        traj = Trajectory(workflow_id="w", mode="full", per_step=per_step, final_answer="5")
        assert traj.context_token_series() == [100, 200, 150]
        assert traj.steps == 3

    def test_step_record_requires_positive_tokens(self):
        with pytest.raises(ValueError):
            StepRecord(step=1, context_tokens=0, digest="d", agent_output="o")


class TestRunConfigAndWorkflow:
    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            RunConfig(k=0)

    def test_guards_must_be_positive(self):
        with pytest.raises(ValueError):
            RunConfig(step_budget_factor=0)
        with pytest.raises(ValueError):
            RunConfig(token_budget=0)

    def test_describe_embeds_gold_when_present(self):
        wf = Workflow(
            id="w1", initial_input="i", system_prompt="p", plan=small_plan(),
            final_requirement="Report the result.", seed=1, gold_answer="5",
        )
        assert "GOLD: 5" in wf.describe()
        assert "GOLD" not in wf.describe(include_gold=False)
