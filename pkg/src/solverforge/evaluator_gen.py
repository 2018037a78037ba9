"""Evaluator synthesis and joint solver-evaluator referee debugging.

Evaluators are complete standalone scripts under the executor contract:
they read ``args.json`` ({"result_path", "reference_path"}) and write
``score.json`` ({"score": x}). Optimization evaluators are planned first
and emit a continuous score in [0, 1]; assistant evaluators are generated
directly and must emit exactly 0 or 1.

When an evaluator crashes while scoring a clean solver result, a referee
prompt attributes the fault (solver / evaluator / interaction) and
produces revisions of both sides. Revisions are accepted only under
integrity constraints that block spurious co-optimization: the revised
solver must still pass the structural lint and must not embed reference
answer literals, and the revised evaluator must still follow the score
manifest contract. Literal-leak detection is lexical over the candidate's
AST constants - a deliberate under-approximation of "do not hard-code the
answer" that is cheap and side-effect free.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from pathlib import Path

from .analyzer import ProblemSpec
from .errors import (
    CodeExtractError,
    EvaluatorCrashedError,
    FenceParseError,
    IntegrityViolationError,
    NoFenceError,
    PlanParseError,
    ScoreMissingError,
    TemplateViolationError,
    VerdictParseError,
    VerificationExhaustedError,
)
from .executor import ExecutionResult, RunConfig, run_evaluator
from .gateway import ASSIST, Gateway, PromptId, extract_fenced
from .registry import ToolSet, describe_for_prompt
from .solver import Plan, Subtask, VerifiedPair, execute_candidate, lint_solver
from .transcript import Transcript

MODE_BINARY = "binary"
MODE_SCORED = "scored"

FAULT_SOLVER = "solver"
FAULT_EVALUATOR = "evaluator"
FAULT_INTERACTION = "interaction"

_EVAL_ENTRY = "def evaluate("


@dataclass
class EvaluatorArtifact:
    code: str
    mode: str  # binary | scored
    plan: Plan | None = None
    provenance: str = ""


@dataclass
class RefereeVerdict:
    fault: str  # solver | evaluator | interaction
    revised_solver: str
    revised_evaluator: str
    justification: str = ""


@dataclass
class EvalGenConfig:
    max_referee: int = 3
    tool_budget: int = 20000


def lint_evaluator(code: str) -> list[str]:
    """Structural checks on an evaluator script; empty list = clean."""
    violations: list[str] = []
    try:
        ast.parse(code)
    except SyntaxError as exc:
        return [f"syntax error: {exc.msg} (line {exc.lineno})"]
    if _EVAL_ENTRY not in code:
        violations.append("missing `evaluate(` entry function")
    if "args.json" not in code:
        violations.append("does not read the args.json input contract")
    if "score.json" not in code:
        violations.append("does not write the score.json manifest")
    return violations


def reference_descriptor(spec: ProblemSpec) -> str:
    """Prompt-safe description of the reference answer: shape, never values."""
    ref = spec.reference_answer
    if isinstance(ref, str) and ref and Path(ref).is_file():
        return (
            f"a data file named {Path(ref).name!r}; the evaluator receives its "
            "location as reference_path at runtime"
        )
    if ref == "" or ref is None:
        return "none (pass/fail task; correctness is judged from the result alone)"
    kind = type(ref).__name__
    return (
        f"a JSON-encoded {kind} stored in a private file; the evaluator receives "
        "its location as reference_path at runtime and must load it from there"
    )


def materialize_reference(reference: object, run_dir: str | Path) -> Path:
    """Ensure the reference answer exists as a file the evaluator can load.

    File paths are used as-is; inline payloads are serialized to
    ``reference.json`` under run_dir.
    """
    if isinstance(reference, str) and reference and Path(reference).is_file():
        return Path(reference)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "reference.json"
    path.write_text(json.dumps(reference, sort_keys=True))
    return path


# --- generation --------------------------------------------------------------


def plan_evaluator(
    task: str,
    goal: str,
    reference_desc: str,
    tools_eval: ToolSet,
    solver_code: str,
    gateway: Gateway,
    tool_budget: int = 20000,
) -> Plan:
    """Decompose the validation objective into checkable subtasks (opt only)."""
    reply = gateway.ask(
        PromptId.PLAN_EVAL,
        {
            "task": task,
            "goal": goal,
            "reference": reference_desc,
            "tools": describe_for_prompt(tools_eval, tool_budget),
            "solver_code": solver_code,
        },
    )
    try:
        doc = extract_fenced(reply, kind="json")
    except (NoFenceError, FenceParseError) as exc:
        raise PlanParseError(f"evaluator plan unusable: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("subtasks"), list) or not doc["subtasks"]:
        raise PlanParseError("evaluator plan has no subtasks list")
    result = Plan(subtasks=[], rationale=str(doc.get("rationale", "")))
    for raw in doc["subtasks"]:
        if not isinstance(raw, dict):
            raise PlanParseError(f"evaluator subtask is not an object: {raw!r}")
        kept = []
        for name in raw.get("tools", []) or []:
            if name in tools_eval:
                kept.append(name)
            else:
                result.diagnostics.append(f"evaluator plan referenced unknown tool `{name}`; dropped")
        result.subtasks.append(Subtask(description=str(raw.get("description", "")), tools=kept))
    return result


def generate_evaluator(
    spec: ProblemSpec,
    tools_eval: ToolSet,
    solver_code: str,
    eval_plan: Plan | None,
    gateway: Gateway,
    tool_budget: int = 20000,
) -> EvaluatorArtifact:
    """Produce the evaluator script: planned/scored for opt, direct/binary for assist."""
    if spec.task_type == ASSIST:
        reply = gateway.ask(
            PromptId.GEN_EVAL_ASSIST,
            {
                "task": spec.task,
                "tools": describe_for_prompt(tools_eval, tool_budget),
                "solver_code": solver_code,
            },
        )
        mode = MODE_BINARY
    else:
        reply = gateway.ask(
            PromptId.GEN_EVAL,
            {
                "task": spec.task,
                "goal": spec.goal,
                "reference": reference_descriptor(spec),
                "tools": describe_for_prompt(tools_eval, tool_budget),
                "solver_code": solver_code,
                "plan": eval_plan.to_prompt_json() if eval_plan else "(no plan)",
            },
        )
        mode = MODE_SCORED
    try:
        code = extract_fenced(reply, kind="code")
    except NoFenceError as exc:
        raise CodeExtractError(str(exc)) from exc
    violations = lint_evaluator(code)
    if violations:
        raise TemplateViolationError(violations)
    return EvaluatorArtifact(code=code, mode=mode, plan=eval_plan)


# --- integrity constraints ----------------------------------------------------


def _reference_leaves(reference: object) -> list[object]:
    leaves: list[object] = []

    def walk(value):
        if isinstance(value, dict):
            for v in value.values():
                walk(v)
        elif isinstance(value, (list, tuple)):
            for v in value:
                walk(v)
        elif isinstance(value, bool) or value is None:
            return
        elif isinstance(value, (int, float, str)):
            leaves.append(value)

    walk(reference)
    return leaves


def find_reference_leaks(code: str, reference: object) -> list[str]:
    """Literals in ``code`` that reproduce reference-answer values.

    Numeric leaves match on exact equality (tiny integers are ignored as
    too common to be evidence); string leaves match on equality or
    substring containment for length >= 3.
    """
    leaves = _reference_leaves(reference)
    if not leaves:
        return []
    try:
        tree = ast.parse(code)
    except SyntaxError:
        return []
    leaks: list[str] = []
    constants = [n.value for n in ast.walk(tree) if isinstance(n, ast.Constant)]
    for leaf in leaves:
        for const in constants:
            if isinstance(leaf, str):
                if isinstance(const, str) and len(leaf) >= 3 and leaf in const:
                    leaks.append(f"string literal leaks reference value {leaf!r}")
                    break
            elif isinstance(leaf, (int, float)):
                if isinstance(leaf, int) and abs(leaf) <= 2:
                    break
                if isinstance(const, (int, float)) and not isinstance(const, bool) and const == leaf:
                    leaks.append(f"numeric literal leaks reference value {leaf!r}")
                    break
    return leaks


def _inline_reference(spec: ProblemSpec) -> object | None:
    """The reference payload when it is an inline value rather than a file."""
    ref = spec.reference_answer
    if ref == "" or ref is None:
        return None
    if isinstance(ref, str) and Path(ref).is_file():
        return None
    return ref


def check_verdict_integrity(
    verdict: RefereeVerdict,
    spec: ProblemSpec,
    allowed_tools: set[str],
) -> None:
    """Reject revisions that break the lint, leak the answer, or drop the contract."""
    violations = lint_solver(verdict.revised_solver, allowed_tools)
    if violations:
        raise IntegrityViolationError("solver-lint", "; ".join(violations))
    inline = _inline_reference(spec)
    if inline is not None:
        leaks = find_reference_leaks(verdict.revised_solver, inline)
        if leaks:
            raise IntegrityViolationError("reference-leak", "; ".join(leaks))
    eval_violations = lint_evaluator(verdict.revised_evaluator)
    if eval_violations:
        raise IntegrityViolationError("evaluator-contract", "; ".join(eval_violations))


# --- referee -----------------------------------------------------------------


def referee_debug(
    task: str,
    solver_code: str,
    result_payload: object,
    tools_eval: ToolSet,
    evaluator_code: str,
    error: str,
    gateway: Gateway,
    spec: ProblemSpec,
    tool_budget: int = 20000,
) -> RefereeVerdict:
    """Ask the referee to attribute the fault and revise both sides.

    The verdict is accepted only after the integrity checks pass; a verdict
    that changes nothing while claiming a specific fault is rejected as
    unusable.
    """
    reply = gateway.ask(
        PromptId.REFEREE,
        {
            "task": task,
            "solver_code": solver_code,
            "result": json.dumps(result_payload, sort_keys=True, default=str),
            "tools": describe_for_prompt(tools_eval, tool_budget),
            "evaluator_code": evaluator_code,
            "error": error,
        },
    )
    try:
        doc = extract_fenced(reply, kind="json")
    except (NoFenceError, FenceParseError) as exc:
        raise VerdictParseError(f"referee reply unusable: {exc}") from exc
    if not isinstance(doc, dict):
        raise VerdictParseError("referee reply is not a JSON object")
    fault = str(doc.get("fault", "")).lower()
    if fault not in (FAULT_SOLVER, FAULT_EVALUATOR, FAULT_INTERACTION):
        raise VerdictParseError(f"unknown fault attribution: {fault!r}")
    revised_solver = doc.get("revised_solver", solver_code) or solver_code
    revised_evaluator = doc.get("revised_evaluator", evaluator_code) or evaluator_code
    verdict = RefereeVerdict(
        fault=fault,
        revised_solver=str(revised_solver),
        revised_evaluator=str(revised_evaluator),
        justification=str(doc.get("justification", "")),
    )
    solver_changed = verdict.revised_solver != solver_code
    evaluator_changed = verdict.revised_evaluator != evaluator_code
    if not solver_changed and not evaluator_changed:
        raise VerdictParseError("verdict revises neither side")
    check_verdict_integrity(verdict, spec, set(spec.tools.names()))
    return verdict


# --- verification loop --------------------------------------------------------


def verify_pair(
    solver_code: str,
    evaluator: EvaluatorArtifact,
    spec: ProblemSpec,
    solver_execution: ExecutionResult,
    reference_path: str | Path,
    run_config: RunConfig,
    gateway: Gateway,
    config: EvalGenConfig | None = None,
    kwargs: dict | None = None,
    transcript: Transcript | None = None,
    tools_eval: ToolSet | None = None,
) -> VerifiedPair:
    """Run the evaluator; on crash, referee-debug and retry the revised pair.

    Terminates on a clean evaluation or after max_referee rounds. When the
    referee revises the solver, the solver is re-executed before the next
    evaluation round; a revised solver that no longer runs aborts the
    verification (its diagnostics are carried in the error).
    """
    config = config or EvalGenConfig()
    transcript = transcript if transcript is not None else Transcript()
    evaluator_code = evaluator.code
    execution = solver_execution
    diagnostics: list[str] = []

    for round_index in range(config.max_referee + 1):
        try:
            outcome = run_evaluator(evaluator_code, execution.result_path, reference_path, run_config)
            if evaluator.mode == MODE_BINARY and outcome.raw not in (0, 1):
                raise EvaluatorCrashedError(
                    f"binary evaluator emitted non-binary score {outcome.raw!r}"
                )
            transcript.record("evaluation", score=outcome.score, rounds=round_index)
            return VerifiedPair(
                solver_code=solver_code,
                evaluator_code=evaluator_code,
                evaluator_mode=evaluator.mode,
                score=outcome.score,
                execution=execution,
            )
        except (EvaluatorCrashedError, ScoreMissingError) as exc:
            error_text = getattr(exc, "diagnostics", None) or str(exc)
            diagnostics.append(f"round {round_index}: {error_text}")
            transcript.record("evaluator_crash", rounds=round_index, error=str(exc))
            if round_index >= config.max_referee:
                break
            verdict = referee_debug(
                spec.task,
                solver_code,
                execution.result_payload,
                tools_eval=tools_eval if tools_eval is not None else spec.tools,
                evaluator_code=evaluator_code,
                error=error_text,
                gateway=gateway,
                spec=spec,
                tool_budget=config.tool_budget,
            )
            transcript.record("referee", fault=verdict.fault, rounds=round_index)
            solver_changed = verdict.revised_solver != solver_code
            evaluator_changed = verdict.revised_evaluator != evaluator_code
            if evaluator_changed or verdict.fault in (FAULT_EVALUATOR, FAULT_INTERACTION):
                evaluator_code = verdict.revised_evaluator
            if solver_changed or verdict.fault in (FAULT_SOLVER, FAULT_INTERACTION):
                solver_code = verdict.revised_solver
                execution = execute_candidate(solver_code, spec.tools, run_config, kwargs)
                if not execution.ok:
                    diagnostics.append(f"revised solver failed: {execution.error_text}")
                    raise VerificationExhaustedError("\n".join(diagnostics))
    raise VerificationExhaustedError("\n".join(diagnostics))


def make_evaluator_provider(
    tools_eval: ToolSet,
    gateway: Gateway,
    run_config: RunConfig,
    reference_path: str | Path,
    config: EvalGenConfig | None = None,
    kwargs: dict | None = None,
    transcript: Transcript | None = None,
):
    """Build the evaluator provider the solve loop calls after a clean execution."""

    def provider(spec: ProblemSpec, solver_code: str, execution: ExecutionResult) -> VerifiedPair:
        eval_plan = None
        if spec.task_type != ASSIST:
            eval_plan = plan_evaluator(
                spec.task,
                spec.goal,
                reference_descriptor(spec),
                tools_eval,
                solver_code,
                gateway,
            )
        artifact = generate_evaluator(spec, tools_eval, solver_code, eval_plan, gateway)
        return verify_pair(
            solver_code,
            artifact,
            spec,
            execution,
            reference_path,
            run_config,
            gateway,
            config=config,
            kwargs=kwargs,
            transcript=transcript,
            tools_eval=tools_eval,
        )

    return provider
