"""Solution generation: planning, templated code generation, execute/debug loop.

Generated solvers must follow a fixed structural contract so the rest of
the engine can run, score, and package them mechanically:

- a module-level entry function ``solve`` whose first parameter is
  ``tools`` and whose remaining parameters are all keyword-with-defaults;
- a machine-readable header comment listing those parameters::

      # solve-params:
      #   beam_size: int = 10

  (or ``# solve-params: none`` when the entry takes only ``tools``);
- tool access only through ``tools["Tool_Name"].execute(...)`` with names
  declared in the candidate tool set.

``lint_solver`` enforces the contract; the solve loop plans, generates,
executes, debugs on error up to ``max_debug`` times, and re-plans from
scratch up to ``max_cycles`` times when a cycle cannot produce a validated
solution.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .analyzer import ProblemSpec
from .errors import (
    CodeExtractError,
    FenceParseError,
    ForgeError,
    NoFenceError,
    PlanParseError,
    SolveExhaustedError,
    TemplateViolationError,
)
from .executor import (
    ExecutionResult,
    RunConfig,
    SHIM_NAME,
    compose_solver_script,
    emit_tools_shim,
    run_script,
    truncate_diagnostics,
)
from .gateway import ASSIST, Gateway, PromptId, extract_fenced
from .registry import ToolSet, describe_for_prompt
from .transcript import Transcript

HEADER_MARKER = "# solve-params:"
ENTRY_NAME = "solve"
FIRST_PARAM = "tools"

# how much of an execution error tail is shown to the debug prompt
ERROR_PROMPT_CAP = 4096

_TOOL_REF_RE = re.compile(r"tools\[\s*[\"']([^\"']+)[\"']\s*\]")
_HEADER_PARAM_RE = re.compile(r"^#\s+([A-Za-z_]\w*)\s*:\s*([^=]+?)\s*=\s*(.+?)\s*$")


@dataclass(frozen=True)
class CodeTemplate:
    """The structural contract instantiated code must satisfy."""

    body: str
    entry_name: str = ENTRY_NAME
    first_param: str = FIRST_PARAM
    header_marker: str = HEADER_MARKER
    # ordered section markers shown in the skeleton; guidance, not enforced
    sections: tuple[str, ...] = (
        "# import Python packages",
        "# helper functions",
        "# main entry point",
    )


def load_code_template(prompts_dir: str | Path | None = None) -> CodeTemplate:
    root = Path(prompts_dir) if prompts_dir else Path(__file__).parent / "prompts"
    path = root / "solver_template.txt"
    if not path.is_file():
        path = Path(__file__).parent / "prompts" / "solver_template.txt"
    return CodeTemplate(body=path.read_text())


def extract_tool_references(code: str) -> set[str]:
    """Every tool name the code accesses via tools["Name"]."""
    return set(_TOOL_REF_RE.findall(code))


def parse_header_params(code: str) -> dict[str, tuple[str, str]] | None:
    """Parse the solve-params header into {name: (type, default text)}.

    Returns None when no header marker is present at all.
    """
    lines = code.splitlines()
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped.startswith(HEADER_MARKER):
            continue
        remainder = stripped[len(HEADER_MARKER):].strip()
        params: dict[str, tuple[str, str]] = {}
        if remainder == "none":
            return params
        for follow in lines[i + 1:]:
            m = _HEADER_PARAM_RE.match(follow.strip())
            if not m:
                break
            params[m.group(1)] = (m.group(2).strip(), m.group(3).strip())
        return params
    return None


def _find_entry(tree: ast.Module) -> ast.FunctionDef | None:
    for node in tree.body:
        if isinstance(node, ast.FunctionDef) and node.name == ENTRY_NAME:
            return node
    return None


def lint_solver(code: str, allowed_tools: set[str] | None = None) -> list[str]:
    """Check a candidate against the structural contract; empty list = clean."""
    violations: list[str] = []
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        return [f"syntax error: {exc.msg} (line {exc.lineno})"]

    entry = _find_entry(tree)
    if entry is None:
        violations.append(f"missing module-level `{ENTRY_NAME}` entry function")
    else:
        args = entry.args
        if args.posonlyargs:
            violations.append("entry must not use positional-only parameters")
        names = [a.arg for a in args.args]
        if not names or names[0] != FIRST_PARAM:
            violations.append(f"entry's first parameter must be `{FIRST_PARAM}`")
        if args.vararg or args.kwarg:
            violations.append("entry must not use *args or **kwargs")
        keyword_params = names[1:] + [a.arg for a in args.kwonlyargs]
        defaults_count = len(args.defaults) + sum(d is not None for d in args.kw_defaults)
        if defaults_count < len(keyword_params):
            violations.append("every parameter after `tools` must have a default")

        header = parse_header_params(code)
        if header is None:
            violations.append(f"missing `{HEADER_MARKER}` header block")
        else:
            declared = set(header)
            actual = set(keyword_params)
            for name in sorted(actual - declared):
                violations.append(f"parameter `{name}` missing from header block")
            for name in sorted(declared - actual):
                violations.append(f"header block lists unknown parameter `{name}`")

    if allowed_tools is not None:
        for name in sorted(extract_tool_references(code)):
            if name not in allowed_tools:
                violations.append(f"undeclared tool referenced: {name}")
    return violations


# --- planning ----------------------------------------------------------------


@dataclass
class Subtask:
    description: str
    tools: list[str] = field(default_factory=list)
    packages: list[str] = field(default_factory=list)


@dataclass
class Plan:
    subtasks: list[Subtask]
    rationale: str = ""
    diagnostics: list[str] = field(default_factory=list)

    def to_prompt_json(self) -> str:
        return json.dumps(
            {
                "rationale": self.rationale,
                "subtasks": [
                    {"description": s.description, "tools": s.tools, "packages": s.packages}
                    for s in self.subtasks
                ],
            },
            indent=2,
        )


def plan(task: str, tools_solve: ToolSet, gateway: Gateway, tool_budget: int = 20000) -> Plan:
    """Decompose the task into subtasks; unknown tool references are dropped."""
    reply = gateway.ask(
        PromptId.PLAN,
        {"task": task, "tools": describe_for_prompt(tools_solve, tool_budget)},
    )
    try:
        doc = extract_fenced(reply, kind="json")
    except (NoFenceError, FenceParseError) as exc:
        raise PlanParseError(f"plan reply unusable: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("subtasks"), list) or not doc["subtasks"]:
        raise PlanParseError("plan reply has no subtasks list")
    result = Plan(subtasks=[], rationale=str(doc.get("rationale", "")))
    for raw in doc["subtasks"]:
        if not isinstance(raw, dict):
            raise PlanParseError(f"subtask is not an object: {raw!r}")
        kept: list[str] = []
        for name in raw.get("tools", []) or []:
            if name in tools_solve:
                kept.append(name)
            else:
                result.diagnostics.append(f"plan referenced unknown tool `{name}`; dropped")
        result.subtasks.append(
            Subtask(
                description=str(raw.get("description", "")),
                tools=kept,
                packages=[str(p) for p in raw.get("packages", []) or []],
            )
        )
    return result


# --- code generation ---------------------------------------------------------


def _extract_code(reply: str) -> str:
    try:
        return extract_fenced(reply, kind="code")
    except NoFenceError as exc:
        raise CodeExtractError(str(exc)) from exc


def _lint_or_raise(code: str, tools: ToolSet) -> str:
    violations = lint_solver(code, set(tools.names()))
    if violations:
        raise TemplateViolationError(violations)
    return code


def generate_code(
    task: str,
    tools_solve: ToolSet,
    solve_plan: Plan,
    template: CodeTemplate,
    gateway: Gateway,
    tool_budget: int = 20000,
) -> str:
    reply = gateway.ask(
        PromptId.GENERATE,
        {
            "task": task,
            "tools": describe_for_prompt(tools_solve, tool_budget),
            "plan": solve_plan.to_prompt_json(),
            "template": template.body,
        },
    )
    return _lint_or_raise(_extract_code(reply), tools_solve)


def debug_code(
    task: str,
    tools_solve: ToolSet,
    code: str,
    error: str,
    gateway: Gateway,
    tool_budget: int = 20000,
) -> str:
    reply = gateway.ask(
        PromptId.DEBUG,
        {
            "task": task,
            "tools": describe_for_prompt(tools_solve, tool_budget),
            "code": code,
            "error": truncate_diagnostics(error, ERROR_PROMPT_CAP),
        },
    )
    return _lint_or_raise(_extract_code(reply), tools_solve)


# --- the solve loop ----------------------------------------------------------


@dataclass
class SolveConfig:
    max_debug: int = 3
    max_cycles: int = 3
    tool_budget: int = 20000


@dataclass
class VerifiedPair:
    """What an evaluator provider returns: the verified pair plus its score."""

    solver_code: str
    evaluator_code: str
    evaluator_mode: str  # binary | scored
    score: float
    execution: ExecutionResult


@dataclass
class SolveOutcome:
    code: str
    result: ExecutionResult | None
    score: float | None
    evaluator_code: str | None
    evaluator_mode: str | None
    transcript: Transcript
    debugs_per_cycle: list[int]
    cycles: int

    @property
    def debug_rounds(self) -> int:
        return sum(self.debugs_per_cycle)


def code_digest(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()[:16]


def execute_candidate(
    code: str,
    tools: ToolSet,
    run_config: RunConfig,
    kwargs: dict | None = None,
) -> ExecutionResult:
    """Run a template-conforming candidate: harness + tool shim + kwargs."""
    script = compose_solver_script(code)
    shim = emit_tools_shim(tools)
    return run_script(script, run_config, inputs=kwargs or {}, support_files={SHIM_NAME: shim})


def solve_loop(
    spec: ProblemSpec,
    evaluator_provider: Callable[[ProblemSpec, str, ExecutionResult], VerifiedPair],
    gateway: Gateway,
    run_config: RunConfig,
    config: SolveConfig | None = None,
    template: CodeTemplate | None = None,
    kwargs: dict | None = None,
    transcript: Transcript | None = None,
) -> SolveOutcome:
    """Plan -> generate -> (execute -> debug)* -> validate, restarting on failure.

    Assist specs accept only a validation score of exactly 1; optimization
    specs accept any clean, finite score (improvement is the evolution
    stage's job). Raises SolveExhaustedError carrying the best partial
    outcome when every cycle fails.
    """
    config = config or SolveConfig()
    template = template or load_code_template()
    transcript = transcript if transcript is not None else Transcript()
    best: SolveOutcome | None = None
    debugs_per_cycle: list[int] = []

    def _record_execution(code: str, execution: ExecutionResult) -> None:
        transcript.record(
            "execution",
            code_sha=code_digest(code),
            **execution.summary(),
        )

    for cycle in range(1, config.max_cycles + 1):
        transcript.record("cycle", index=cycle)
        try:
            the_plan = plan(spec.task, spec.tools, gateway, config.tool_budget)
            for note in the_plan.diagnostics:
                transcript.record("diagnostic", stage="plan", message=note)
            code = generate_code(
                spec.task, spec.tools, the_plan, template, gateway, config.tool_budget
            )
        except ForgeError as exc:
            transcript.record("cycle_failed", index=cycle, stage="generate", error=str(exc))
            debugs_per_cycle.append(0)
            continue

        debugs = 0
        execution = execute_candidate(code, spec.tools, run_config, kwargs)
        _record_execution(code, execution)
        while not execution.ok and debugs < config.max_debug:
            try:
                code = debug_code(
                    spec.task, spec.tools, code, execution.error_text or "", gateway, config.tool_budget
                )
            except ForgeError as exc:
                transcript.record("cycle_failed", index=cycle, stage="debug", error=str(exc))
                break
            debugs += 1
            execution = execute_candidate(code, spec.tools, run_config, kwargs)
            _record_execution(code, execution)
        debugs_per_cycle.append(debugs)

        if not execution.ok:
            transcript.record("cycle_failed", index=cycle, stage="execute", error=execution.error_text)
            continue

        try:
            pair = evaluator_provider(spec, code, execution)
        except ForgeError as exc:
            transcript.record("cycle_failed", index=cycle, stage="validate", error=str(exc))
            continue
        transcript.record(
            "validated",
            index=cycle,
            score=pair.score,
            solver_sha=code_digest(pair.solver_code),
            evaluator_sha=code_digest(pair.evaluator_code),
        )
        outcome = SolveOutcome(
            code=pair.solver_code,
            result=pair.execution,
            score=pair.score,
            evaluator_code=pair.evaluator_code,
            evaluator_mode=pair.evaluator_mode,
            transcript=transcript,
            debugs_per_cycle=list(debugs_per_cycle),
            cycles=cycle,
        )
        if spec.task_type == ASSIST:
            accepted = pair.score == 1.0
        else:
            accepted = math.isfinite(pair.score)
        if accepted:
            transcript.record("accepted", score=pair.score, cycles=cycle)
            return outcome
        if best is None or (outcome.score or 0.0) > (best.score or 0.0):
            best = outcome
        transcript.record("cycle_failed", index=cycle, stage="accept", error=f"score {pair.score}")

    raise SolveExhaustedError(
        f"no accepted solution after {config.max_cycles} cycles", best_partial=best
    )
