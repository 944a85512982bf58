"""Plan-aware context compression engine for long-horizon agent workflows."""

from .model import (
    CompressionRecord,
    ContextState,
    Plan,
    RunConfig,
    StepRecord,
    TaskStep,
    ToolResult,
    Trajectory,
    TrajectoryPair,
    Workflow,
    context_tokens,
    parse_context,
    render_context,
    render_plan,
    token_count,
)
from .synth import GeneratorConfig, ToolCall, WorldState, apply_tool, generate_workflow, oracle_answer
from .executor import (
    IdentityCompressor,
    OracleRuleCompressor,
    PromptCompressor,
    plan_slice,
    run_compressed,
    run_full,
    run_pair,
    update_context,
)
from .scoring import SuccessLabel, Thresholds, cosine, label_trajectory, semantic_equivalence
from .supervision import (
    DatasetManifest,
    SupervisionTuple,
    dedup_tuples,
    extract_tuples,
    read_dataset,
    write_dataset,
)
from .metrics import EvalCase, RunReport, build_report, dependency, em, f1, peak
from .evolution import (
    EvalOutcome,
    EvolveConfig,
    PromptVariant,
    Registry,
    VariantStats,
    composite_score,
    evolve,
    propose_prompt_mutation,
    reward,
)

__version__ = "0.1.0"
