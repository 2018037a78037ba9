"""End-to-end orchestration: analyze -> solve -> verify -> (evolve) -> artifacts.

One run owns a directory under the runs root::

    runs/<id>/transcript.jsonl   ordered prompt/execution/score event log
    runs/<id>/evolution.jsonl    one record per generation (opt runs)
    runs/<id>/solver.py          final solver code
    runs/<id>/evaluator.py       verified evaluator script
    runs/<id>/outcome.json       score, iteration counts, final status
    runs/<id>/reference/...      run-private copy of the reference answer
    runs/<id>/work/...           per-execution working directories

The transcript is written even when a stage fails, so failed runs stay
inspectable and reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .analyzer import ProblemSpec, analyze, select_eval_tools, stash_reference
from .benchmark import Instance, TaskSpec, TrialRecord, extract_kwargs
from .config import EngineConfig
from .errors import ForgeError
from .evaluator_gen import EvalGenConfig, make_evaluator_provider, materialize_reference
from .evolution import (
    EvolutionConfig,
    EvolveResult,
    Individual,
    OP_SEED,
    evolve,
)
from .executor import RunConfig, run_evaluator
from .gateway import ASSIST, Gateway, OPT, ScriptedBackend, load_templates
from .registry import Registry
from .retrieval import VectorIndex
from .solver import (
    SolveConfig,
    SolveOutcome,
    execute_candidate,
    extract_tool_references,
    load_code_template,
    solve_loop,
)
from .transcript import Transcript


@dataclass
class PipelineResult:
    spec: ProblemSpec
    outcome: SolveOutcome
    evolved: EvolveResult | None
    run_dir: Path
    final_code: str
    final_score: float | None
    transcript: Transcript


def make_run_config(config: EngineConfig, run_dir: Path) -> RunConfig:
    return RunConfig(
        timeout=config.timeout,
        workdir_root=str(run_dir / "work"),
        max_parallel=config.parallelism,
        deny_network=config.deny_network,
    )


def run_pipeline(
    question: str,
    registry: Registry,
    index: VectorIndex,
    gateway: Gateway,
    run_dir: str | Path,
    config: EngineConfig | None = None,
    forced_type: str | None = None,
    kwargs: dict | None = None,
) -> PipelineResult:
    """Drive one question through the full agent pipeline.

    Optimization runs continue into evolution (unless generations is 0);
    assist runs stop at the verified solution. Raises the underlying
    ForgeError when no stage produces an accepted solution - after saving
    the transcript.
    """
    config = config or EngineConfig()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    transcript = Transcript()
    transcript.register_scrub(str(run_dir), "<run>")
    gateway.observer = lambda pid, prompt, reply: transcript.record(
        "prompt", prompt_id=pid, prompt=prompt, reply=reply
    )
    run_config = make_run_config(config, run_dir)
    template = load_code_template(config.prompts_dir or None)

    try:
        spec = analyze(question, registry, index, gateway, k=config.k, forced_type=forced_type)
        transcript.record(
            "analyzed",
            task_type=spec.task_type,
            task=spec.task,
            goal=spec.goal,
            tools=spec.tools.names(),
        )
        spec = stash_reference(spec, run_dir)
        reference_path = materialize_reference(spec.reference_answer, run_dir / "reference")
        tools_eval = select_eval_tools(registry, spec.tools)
        provider = make_evaluator_provider(
            tools_eval,
            gateway,
            run_config,
            reference_path,
            config=EvalGenConfig(max_referee=config.max_referee, tool_budget=config.tool_budget),
            kwargs=kwargs,
            transcript=transcript,
        )
        outcome = solve_loop(
            spec,
            provider,
            gateway,
            run_config,
            config=SolveConfig(
                max_debug=config.max_debug,
                max_cycles=config.max_cycles,
                tool_budget=config.tool_budget,
            ),
            template=template,
            kwargs=kwargs,
            transcript=transcript,
        )

        evolved = None
        if spec.task_type == OPT and config.generations > 0:
            seed = Individual(
                code=outcome.code,
                description="verified initial solution",
                fitness=outcome.score,
                generation_born=0,
                operator=OP_SEED,
            )
            evolved = evolve(
                seed,
                outcome.evaluator_code,
                EvolutionConfig(
                    generations=config.generations,
                    capacity=config.capacity,
                    seed=config.evolution_seed,
                ),
                gateway,
                run_config,
                task=spec.task,
                tools_solve=spec.tools,
                template=template,
                reference_path=str(reference_path),
                kwargs=kwargs,
            )
            transcript.record(
                "evolved",
                generations=config.generations,
                best_fitness=evolved.best.fitness,
                history=[r.best_fitness for r in evolved.history],
            )
            _save_history(evolved, run_dir)

        final_code = evolved.best.code if evolved else outcome.code
        final_score = evolved.best.fitness if evolved else outcome.score
        _save_artifacts(run_dir, final_code, outcome, evolved, final_score)
        return PipelineResult(
            spec=spec,
            outcome=outcome,
            evolved=evolved,
            run_dir=run_dir,
            final_code=final_code,
            final_score=final_score,
            transcript=transcript,
        )
    finally:
        transcript.save(run_dir / "transcript.jsonl")


def _save_history(evolved: EvolveResult, run_dir: Path) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in evolved.history]
    (run_dir / "evolution.jsonl").write_text("".join(line + "\n" for line in lines))


def _save_artifacts(
    run_dir: Path,
    final_code: str,
    outcome: SolveOutcome,
    evolved: EvolveResult | None,
    final_score: float | None,
) -> None:
    (run_dir / "solver.py").write_text(final_code)
    if outcome.evaluator_code:
        (run_dir / "evaluator.py").write_text(outcome.evaluator_code)
    doc = {
        "score": final_score,
        "verified_score": outcome.score,
        "cycles": outcome.cycles,
        "debugs_per_cycle": outcome.debugs_per_cycle,
        "evolved": evolved is not None,
        "best_fitness_history": [r.best_fitness for r in evolved.history] if evolved else None,
    }
    (run_dir / "outcome.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


# --- benchmark harness ---------------------------------------------------------


def _score_with_task_evaluator(
    task: TaskSpec,
    solver_code: str,
    instance: Instance,
    run_config: RunConfig,
    scratch: Path,
    gateway: Gateway,
    tools,
) -> float:
    """Run the generated solver on one instance and score it with the task's evaluator."""
    kwargs = dict(instance.kwargs)
    if instance.question and not kwargs:
        try:
            kwargs, _ = extract_kwargs(instance.question, solver_code, gateway)
        except ForgeError:
            return 0.0
    execution = execute_candidate(solver_code, tools, run_config, kwargs)
    if not execution.ok:
        return 0.0
    reference_path = materialize_reference(instance.reference, scratch)
    try:
        outcome = run_evaluator(task.evaluator, execution.result_path, reference_path, run_config)
    except ForgeError:
        return 0.0
    return outcome.score


def run_task_trial(
    task: TaskSpec,
    trial: int,
    registry: Registry,
    index: VectorIndex,
    config: EngineConfig,
    runs_root: Path,
    gateway: Gateway | None = None,
) -> TrialRecord:
    """One trial of one task: full pipeline, then task-evaluator scoring."""
    run_dir = runs_root / f"{task.id}-trial{trial}"
    if gateway is None:
        if task.scripted is None:
            raise ForgeError(f"task {task.id} has no scripted replies and no live gateway")
        gateway = Gateway(
            ScriptedBackend(list(task.scripted)),
            templates=load_templates(config.prompts_dir or None),
        )
    run_config = make_run_config(config, run_dir)
    started = time.monotonic()
    try:
        result = run_pipeline(
            task.question,
            registry,
            index,
            gateway,
            run_dir,
            config=config,
            forced_type=task.task_type,
        )
        executed = result.outcome.result is not None and result.outcome.result.ok
        final_code = result.final_code
    except ForgeError:
        record = TrialRecord(
            task_id=task.id,
            trial=trial,
            task_type=task.task_type,
            executed=False,
            tools_used=[],
            tools_reference=list(task.candidate_tools),
            wall_time=time.monotonic() - started,
        )
        return record

    record = TrialRecord(
        task_id=task.id,
        trial=trial,
        task_type=task.task_type,
        executed=executed,
        tools_used=sorted(extract_tool_references(final_code)),
        tools_reference=list(task.candidate_tools),
        wall_time=0.0,
    )
    scratch = run_dir / "bench"
    scratch.mkdir(parents=True, exist_ok=True)
    if task.task_type == ASSIST:
        reference_path = materialize_reference(None, scratch)
        try:
            outcome = run_evaluator(
                task.evaluator, result.outcome.result.result_path, reference_path, run_config
            )
            record.assist_score = 1.0 if outcome.raw == 1 else 0.0
        except ForgeError:
            record.assist_score = 0.0
    else:
        for subset_name, instances in (("train", task.train_instances), ("test", task.test_instances)):
            scores = [
                _score_with_task_evaluator(
                    task, final_code, instance, run_config, scratch, gateway, result.spec.tools
                )
                for instance in instances
            ]
            if subset_name == "train":
                record.train_scores = scores
            else:
                record.test_scores = scores
    record.wall_time = time.monotonic() - started
    return record


def run_suite(
    tasks: list[TaskSpec],
    registry: Registry,
    index: VectorIndex,
    config: EngineConfig,
    runs_root: str | Path,
    trials: int = 3,
    gateway_factory=None,
) -> list[TrialRecord]:
    """All (task, trial) pairs, optionally in parallel.

    gateway_factory(task, trial) supplies a gateway per trial; by default
    each trial replays the task's own scripted transcript so trials are
    independent and identical.
    """
    runs_root = Path(runs_root)
    runs_root.mkdir(parents=True, exist_ok=True)
    pairs = [(task, trial) for task in tasks for trial in range(trials)]

    def one(pair) -> TrialRecord:
        task, trial = pair
        gateway = gateway_factory(task, trial) if gateway_factory else None
        return run_task_trial(task, trial, registry, index, config, runs_root, gateway)

    if config.parallelism > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            records = list(pool.map(one, pairs))
    else:
        records = [one(pair) for pair in pairs]
    return records
