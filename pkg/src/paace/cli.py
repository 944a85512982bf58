"""Command-line surface tying the pipeline together.

Subcommands mirror the pipeline stages: synth (corpus generation), run
(execute a strategy over a corpus), evolve (teacher prompt search), extract
(supervision dataset), eval (comparison report), compress (one-shot next-k
compression of a context file).

Exit codes: 0 success, 2 configuration error, 3 backend/transport error,
4 data or schema error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import baselines, evolution, executor, metrics, scoring, store, supervision, synth
from .backends import (
    BASE_TEACHER_PROMPT,
    BackendConfig,
    CompletionJudge,
    DEFAULT_TEACHER_PROMPT,
    HTTPCompletionBackend,
    HTTPEmbeddingBackend,
    HashEmbedder,
    SchemaError,
    ScriptedAgentBackend,
    ScriptedJudge,
    ScriptedSummarizerBackend,
    ScriptedTeacherBackend,
    TransportError,
)
from .model import RunConfig, Workflow, parse_context, render_context, token_count


class ConfigError(Exception):
    """Invalid configuration: unknown keys, bad values, missing inputs."""


DEFAULTS: dict = {
    # corpus generation
    "seed": 0,
    "count": 20,
    "min_steps": 5,
    "max_steps": 30,
    "noise_level": 0.5,
    "distractor_count": 12,
    "dep_gap_min": 1,
    "dep_gap_max": 2,
    "answer_style": "bare",
    # execution
    "strategy": "none",
    "k": 2,
    "step_budget_factor": 2,
    "token_budget": 1_000_000_000,
    "theta": 0.85,
    "equivalence_filter": True,
    "judge_filter": True,
    # baselines
    "fifo_turns": 2,
    "retrieval_top_m": 6,
    "extractive_keep_fraction": 0.5,
    "prompting_instruction": baselines.DEFAULT_PROMPTING_INSTRUCTION,
    # backends
    "backend": "scripted",  # scripted | http
    "base_url": "",
    "model": "",
    "auth_env": "",
    "timeout_s": 60.0,
    "max_retries": 3,
    "max_concurrency": 4,
    "student_base_url": "",
    "student_model": "",
    "teacher_prompt": "",
    # fault-injection hooks (filter ablations)
    "corrupt_value_rate": 0.0,
    "flaky_finalize_rate": 0.0,
    # evolution
    "population_cap": 32,
    "elitism": 4,
    "min_evals": 5,
    "batch_size": 4,
    "eval_budget": 200,
    "selection_interval": 8,
    "workers": 1,
    "seed_pool_size": 16,
    "lease_ttl": 300.0,
}

ENV_PREFIX = "PAACE_"

STRATEGIES = (
    "none", "fifo", "retrieval", "prompting", "extractive",
    "paace-oracle", "paace-teacher", "paace-student",
)


def _coerce(raw: str, default) -> object:
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"expected {type(default).__name__}, got {raw!r}") from exc
    return raw


def load_config(
    path: str | None, env: dict[str, str], overrides: dict | None = None
) -> dict:
    """defaults < file < environment < flags; unknown keys are rejected."""
    config = dict(DEFAULTS)
    if path:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(file_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        config.update(loaded)
    for key, default in DEFAULTS.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            config[key] = _coerce(env[env_key], default)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        if value is not None:
            config[key] = value
    return config


def _generator_config(config: dict) -> synth.GeneratorConfig:
    try:
        cfg = synth.GeneratorConfig(
            min_steps=config["min_steps"],
            max_steps=config["max_steps"],
            noise_level=config["noise_level"],
            distractor_count=config["distractor_count"],
            dep_gap_min=config["dep_gap_min"],
            dep_gap_max=config["dep_gap_max"],
            answer_style=config["answer_style"],
        )
        cfg.validate()
        return cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _run_config(config: dict) -> RunConfig:
    try:
        return RunConfig(
            k=config["k"],
            step_budget_factor=config["step_budget_factor"],
            token_budget=config["token_budget"],
            seed=config["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _backend_config(config: dict, base_url_key: str = "base_url", model_key: str = "model") -> BackendConfig:
    base_url = config[base_url_key]
    if not base_url:
        raise ConfigError(f"{base_url_key} is required for the http backend")
    auth_env = config["auth_env"] or None
    if auth_env and auth_env not in os.environ:
        raise ConfigError(f"auth environment variable {auth_env} is not set")
    return BackendConfig(
        base_url=base_url,
        model=config[model_key],
        auth_env=auth_env,
        timeout_s=config["timeout_s"],
        max_retries=config["max_retries"],
        max_concurrency=config["max_concurrency"],
    )


def _agent_backend(config: dict):
    if config["backend"] == "scripted":
        return ScriptedAgentBackend(flaky_finalize_rate=config["flaky_finalize_rate"])
    if config["backend"] == "http":
        return HTTPCompletionBackend(_backend_config(config))
    raise ConfigError(f"unknown backend {config['backend']!r}")


def _teacher_backend(config: dict):
    if config["backend"] == "scripted":
        return ScriptedTeacherBackend(corrupt_value_rate=config["corrupt_value_rate"])
    return HTTPCompletionBackend(_backend_config(config))


def _judge(config: dict):
    if config["backend"] == "scripted":
        return ScriptedJudge()
    return CompletionJudge(HTTPCompletionBackend(_backend_config(config)))


def _embedder(config: dict):
    if config["backend"] == "scripted" or not config["base_url"]:
        return HashEmbedder()
    return HTTPEmbeddingBackend(_backend_config(config))


def _teacher_prompt(config: dict) -> str:
    return config["teacher_prompt"] or DEFAULT_TEACHER_PROMPT


def _prompt_id(prefix: str, text: str) -> str:
    return f"{prefix}:{hashlib.sha256(text.encode('utf-8')).hexdigest()[:8]}"


def _compressor(config: dict, strategy: str):
    baseline_cfg = _baseline_config(config)
    if strategy in ("fifo", "retrieval", "extractive"):
        return baselines.BaselineCompressor(
            name=strategy, config=baseline_cfg, embedder=_embedder(config)
        )
    if strategy == "prompting":
        backend = (
            ScriptedSummarizerBackend()
            if config["backend"] == "scripted"
            else HTTPCompletionBackend(_backend_config(config))
        )
        return baselines.BaselineCompressor(
            name="prompting", config=baseline_cfg, backend=backend
        )
    if strategy == "paace-oracle":
        return executor.OracleRuleCompressor()
    if strategy == "paace-teacher":
        prompt = _teacher_prompt(config)
        return executor.PromptCompressor(
            backend=_teacher_backend(config),
            prompt=prompt,
            prompt_id=_prompt_id("teacher", prompt),
            name="teacher",
        )
    if strategy == "paace-student":
        if not config["student_base_url"]:
            raise ConfigError("student_base_url is required for paace-student")
        backend = HTTPCompletionBackend(
            _backend_config(config, "student_base_url", "student_model")
        )
        prompt = config["teacher_prompt"] or BASE_TEACHER_PROMPT
        return executor.PromptCompressor(
            backend=backend,
            prompt=prompt,
            prompt_id=_prompt_id("student", prompt + config["student_model"]),
            name="student",
        )
    raise ConfigError(f"unknown strategy {strategy!r}")


def _baseline_config(config: dict) -> baselines.BaselineConfig:
    try:
        return baselines.BaselineConfig(
            fifo_turns=config["fifo_turns"],
            retrieval_top_m=config["retrieval_top_m"],
            prompting_instruction=config["prompting_instruction"],
            extractive_keep_fraction=config["extractive_keep_fraction"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _corpus_path(args, config: dict, run: store.RunDirectory) -> Path:
    if getattr(args, "corpus", None):
        return Path(args.corpus)
    return run.file(store.RunDirectory.CORPUS)


def _read_corpus(path: Path) -> tuple[str, list[tuple[Workflow, synth.WorldState]]]:
    if not path.exists():
        raise ConfigError(f"corpus file not found: {path}")
    corpus_id = ""
    items = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise store.StoreSchemaError(f"corpus line {lineno}: malformed JSON") from exc
            if record.get("kind") == "header":
                corpus_id = record.get("corpus_id", "")
                continue
            items.append((
                store.workflow_from_dict(record["workflow"]),
                store.world_from_dict(record["world"]),
            ))
    return corpus_id, items


def cmd_synth(args, config: dict) -> int:
    gen_cfg = _generator_config(config)
    run = store.RunDirectory.create(args.run_dir, config)
    out_path = Path(args.out) if args.out else run.file(store.RunDirectory.CORPUS)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    seed, count = config["seed"], config["count"]
    corpus_id = f"corpus-{seed}-{count}-{store.config_digest(config)[:8]}"
    with out_path.open("w", encoding="utf-8") as fh:
        header = {"kind": "header", "schema_version": store.SCHEMA_VERSION,
                  "corpus_id": corpus_id, "seed": seed, "count": count}
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for i in range(count):
            wf, world = synth.generate_workflow(seed + i, gen_cfg)
            record = {
                "workflow": store.workflow_to_dict(wf),
                "world": store.world_to_dict(world),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"wrote {count} workflows to {out_path} (corpus {corpus_id})")
    return 0


def cmd_run(args, config: dict) -> int:
    strategy = config["strategy"]
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    run = store.RunDirectory.create(args.run_dir, config)
    corpus_id, items = _read_corpus(_corpus_path(args, config, run))
    run_cfg = _run_config(config)
    agent = _agent_backend(config)
    thresholds = scoring.Thresholds(
        theta=config["theta"],
        equivalence_filter=config["equivalence_filter"],
        judge_filter=config["judge_filter"],
    )
    done = run.completed()
    run_id = run.run_id
    executed = 0

    for wf, world in items:
        if strategy == "none":
            if (wf.id, "full") in done:
                continue
            traj = executor.run_full(wf, world, agent, run_cfg)
            run.append(store.RunDirectory.TRAJECTORIES,
                       store.trajectory_to_dict(traj, run_id, strategy="full"))
            executed += 1
            continue

        compressor = _compressor(config, strategy)
        if (wf.id, strategy) in done and (wf.id, "full") in done:
            continue
        pair = executor.run_pair(wf, world, agent, compressor, run_cfg)
        label = scoring.label_trajectory(pair, thresholds, _judge(config), _embedder(config))
        if (wf.id, "full") not in done:
            run.append(store.RunDirectory.TRAJECTORIES,
                       store.trajectory_to_dict(pair.full, run_id, strategy="full"))
            done.add((wf.id, "full"))
        run.append(store.RunDirectory.TRAJECTORIES,
                   store.trajectory_to_dict(pair.compressed, run_id, strategy=strategy))
        run.append(store.RunDirectory.LABELS,
                   store.label_to_dict(wf.id, strategy, label, run_id))
        executed += 1

    print(f"executed {executed} workflows under strategy {strategy} (corpus {corpus_id})")
    return 0


def cmd_evolve(args, config: dict) -> int:
    run = store.RunDirectory.create(args.run_dir, config)
    gen_cfg = _generator_config(config)
    run_cfg = _run_config(config)
    agent = _agent_backend(config)
    judge = _judge(config)
    embedder = _embedder(config)
    thresholds = scoring.Thresholds(
        theta=config["theta"],
        equivalence_filter=config["equivalence_filter"],
        judge_filter=config["judge_filter"],
    )
    teacher = _teacher_backend(config)

    def evaluator(prompt_text: str, seed: int) -> evolution.EvalOutcome:
        wf, world = synth.generate_workflow(seed, gen_cfg)
        compressor = executor.PromptCompressor(
            backend=teacher, prompt=prompt_text,
            prompt_id=_prompt_id("teacher", prompt_text), name="teacher",
        )
        pair = executor.run_pair(wf, world, agent, compressor, run_cfg)
        label = scoring.label_trajectory(pair, thresholds, judge, embedder)
        ratios = [rec.ratio for rec in pair.records]
        mean_r = sum(ratios) / len(ratios) if ratios else 1.0
        return evolution.EvalOutcome(
            success=label.success, s=label.equivalence_s, r=mean_r
        )

    evolve_cfg = evolution.EvolveConfig(
        population_cap=config["population_cap"],
        elitism=config["elitism"],
        min_evals=config["min_evals"],
        batch_size=config["batch_size"],
        eval_budget=config["eval_budget"],
        selection_interval=config["selection_interval"],
        seed=config["seed"],
        seed_pool_size=config["seed_pool_size"],
        workers=config["workers"],
        lease_ttl=config["lease_ttl"],
    )
    seed_prompt = config["teacher_prompt"] or BASE_TEACHER_PROMPT
    best, registry = evolution.evolve(evolve_cfg, evaluator, seed_prompts=[seed_prompt])
    archive_path = evolution.write_archive(registry, run.file(store.RunDirectory.EVOLUTION))
    print(f"best prompt {best.prompt_id} after {registry.evals_done} evals")
    print(f"archive: {archive_path}")
    print(best.text)
    return 0


def cmd_extract(args, config: dict) -> int:
    run = store.RunDirectory(args.run_dir)
    corpus_id, items = _read_corpus(_corpus_path(args, config, run))
    workflows = {wf.id: wf for wf, _ in items}
    records = run.read(store.RunDirectory.TRAJECTORIES)
    trajectories = [
        (r.get("strategy") or r.get("mode", ""), store.trajectory_from_dict(r))
        for r in records
    ]
    full_by_id = {t.workflow_id: t for s, t in trajectories if s == "full"}
    labels = [store.label_from_dict(r) for r in run.read(store.RunDirectory.LABELS)]
    label_by_key = {(wf_id, strat): label for wf_id, strat, label in labels}

    tuples = []
    for strat, traj in trajectories:
        # Baseline runs are comparison points, not compression supervision.
        if not strat.startswith("paace-"):
            continue
        label = label_by_key.get((traj.workflow_id, strat))
        full = full_by_id.get(traj.workflow_id)
        wf = workflows.get(traj.workflow_id)
        if label is None or full is None or wf is None:
            continue
        pair = executor.TrajectoryPair(
            workflow_id=traj.workflow_id,
            workflow_desc=wf.describe(),
            gold_answer=wf.gold_answer,
            full=full,
            compressed=traj,
        )
        tuples.extend(supervision.extract_tuples(pair, label))

    tuples = supervision.dedup_tuples(tuples)
    out_path = Path(args.out) if args.out else run.file(store.RunDirectory.DATASET)
    manifest = supervision.write_dataset(tuples, out_path, source_run_ids=(run.run_id,))
    print(f"wrote {manifest.count} tuples to {out_path}")
    return 0


_STRATA = ((10, "short"), (20, "medium"), (10**9, "long"))


def _stratum(n_steps: int) -> str:
    for bound, name in _STRATA:
        if n_steps <= bound:
            return name
    return "long"


def cmd_eval(args, config: dict) -> int:
    run = store.RunDirectory(args.run_dir)
    corpus_id, items = _read_corpus(_corpus_path(args, config, run))
    golds = {wf.id: (wf.gold_answer or "", len(wf.plan)) for wf, _ in items}
    cases: dict[str, list[metrics.EvalCase]] = {}
    for record in run.read(store.RunDirectory.TRAJECTORIES):
        traj = store.trajectory_from_dict(record)
        strategy = record.get("strategy") or traj.mode
        if traj.workflow_id not in golds or not traj.per_step:
            continue
        gold, n_steps = golds[traj.workflow_id]
        cases.setdefault(strategy, []).append(metrics.EvalCase(
            trajectory=traj, gold=gold, corpus_id=corpus_id, stratum=_stratum(n_steps),
        ))
    if not cases:
        raise store.StoreSchemaError("no trajectories matching the corpus were found")
    report = metrics.build_report(cases, config_digest=store.config_digest(run.config()))
    run.file(store.RunDirectory.REPORT_JSON).write_text(report.to_json() + "\n", encoding="utf-8")
    table = report.render_table()
    run.file(store.RunDirectory.REPORT_TXT).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_compress(args, config: dict) -> int:
    strategy = config["strategy"]
    if strategy not in ("paace-oracle", "paace-teacher", "paace-student"):
        raise ConfigError("compress supports paace-oracle, paace-teacher, paace-student")
    context_path = Path(args.context)
    if not context_path.exists():
        raise ConfigError(f"context file not found: {args.context}")
    plan_path = Path(args.plan)
    if not plan_path.exists():
        raise ConfigError(f"plan file not found: {args.plan}")
    plan_data = json.loads(plan_path.read_text(encoding="utf-8"))
    if isinstance(plan_data, dict) and "workflow" in plan_data:
        plan_data = plan_data["workflow"]
    wf = store.workflow_from_dict(plan_data)

    state = parse_context(context_path.read_text(encoding="utf-8"), step=args.step)
    compressor = _compressor(config, strategy)
    slice_text = executor.plan_slice(wf.plan, args.step, config["k"])
    compressed = compressor.compress(state, slice_text)
    if compressed is None:
        print("compression returned empty output", file=sys.stderr)
        return 3
    original = token_count(render_context(state))
    text = render_context(compressed)
    print(text)
    print(f"ratio: {token_count(text) / original:.4f}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paace",
        description="Plan-aware context compression pipeline for long-horizon agent workflows",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--run-dir", default="runs/default", help="run directory")
    parser.add_argument("--trace", action="store_true", help="verbose backend logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_global(p: argparse.ArgumentParser) -> None:
        # Accept the top-level flags after the subcommand too; SUPPRESS keeps
        # the subparser from clobbering values parsed before it.
        p.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        p.add_argument("--run-dir", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        p.add_argument("--trace", action="store_true", default=argparse.SUPPRESS,
                       help=argparse.SUPPRESS)

    def add_common(p: argparse.ArgumentParser) -> None:
        add_global(p)
        p.add_argument("--seed", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--backend", choices=("scripted", "http"))
        p.add_argument("--theta", type=float)

    p_synth = sub.add_parser("synth", help="generate a workflow corpus")
    add_global(p_synth)
    p_synth.add_argument("--count", type=int)
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--out", help="corpus output path (default: run dir)")
    p_synth.add_argument("--min-steps", type=int, dest="min_steps")
    p_synth.add_argument("--max-steps", type=int, dest="max_steps")
    p_synth.add_argument("--noise-level", type=float, dest="noise_level")
    p_synth.add_argument("--distractor-count", type=int, dest="distractor_count")
    p_synth.add_argument("--answer-style", choices=("bare", "sentence"), dest="answer_style")

    p_run = sub.add_parser("run", help="execute a strategy over a corpus")
    add_common(p_run)
    p_run.add_argument("--corpus", help="corpus file (default: run dir corpus)")

    p_evolve = sub.add_parser("evolve", help="evolve the teacher compression prompt")
    add_common(p_evolve)
    p_evolve.add_argument("--eval-budget", type=int, dest="eval_budget")
    p_evolve.add_argument("--workers", type=int)
    p_evolve.add_argument("--min-steps", type=int, dest="min_steps")
    p_evolve.add_argument("--max-steps", type=int, dest="max_steps")

    p_extract = sub.add_parser("extract", help="build the supervision dataset")
    add_global(p_extract)
    p_extract.add_argument("--corpus")
    p_extract.add_argument("--out", help="dataset output path (default: run dir)")

    p_eval = sub.add_parser("eval", help="build the comparison report")
    add_global(p_eval)
    p_eval.add_argument("--corpus")

    p_compress = sub.add_parser("compress", help="compress one context file")
    add_common(p_compress)
    p_compress.add_argument("--context", required=True, help="rendered context file")
    p_compress.add_argument("--plan", required=True, help="workflow JSON file")
    p_compress.add_argument("--step", type=int, default=1, help="current step index")

    return parser


_FLAG_KEYS = (
    "seed", "count", "k", "strategy", "backend", "theta", "min_steps", "max_steps",
    "noise_level", "distractor_count", "answer_style", "eval_budget", "workers",
)

COMMANDS = {
    "synth": cmd_synth,
    "run": cmd_run,
    "evolve": cmd_evolve,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "compress": cmd_compress,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.trace else logging.WARNING,
        stream=sys.stderr,
        format="%(name)s %(levelname)s %(message)s",
    )
    try:
        overrides = {
            key: getattr(args, key)
            for key in _FLAG_KEYS
            if getattr(args, key, None) is not None
        }
        config = load_config(args.config, dict(os.environ), overrides)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except (SchemaError, supervision.DatasetSchemaError, store.StoreSchemaError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
