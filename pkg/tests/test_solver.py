from __future__ import annotations

import pytest

from solverforge.analyzer import ProblemSpec
from solverforge.errors import (
    CodeExtractError,
    PlanParseError,
    SolveExhaustedError,
    TemplateViolationError,
)
from solverforge.registry import ToolSet, resolve_tools
from solverforge.solver import (
    Plan,
    SolveConfig,
    VerifiedPair,
    debug_code,
    execute_candidate,
    extract_tool_references,
    generate_code,
    lint_solver,
    load_code_template,
    parse_header_params,
    plan,
    solve_loop,
)
from solverforge.transcript import Transcript

from conftest import ASSIST_SOLVER, PLAN_REPLY, fenced, fenced_json, scripted_gateway

BROKEN_SOLVER = '''# solve-params: none

# main entry point
def solve(tools):
    """Always fails at runtime."""
    raise RuntimeError("fixture failure %s")
'''

PARAMETRIC_SOLVER = '''# solve-params:
#   beam_size: int = 10
#   n_best: int = 10

# main entry point
def solve(tools, beam_size=10, n_best=10):
    """Beam-style fixture."""
    return beam_size + n_best
'''


def _assist_spec(tools: ToolSet | None = None) -> ProblemSpec:
    return ProblemSpec(
        task_type="assist",
        task="Return the fixture answer 42.",
        goal="",
        reference_answer="",
        tools=tools or ToolSet(),
        query="Return the fixture answer 42.",
    )


def passing_provider(spec, code, execution):
    return VerifiedPair(code, "stub-evaluator", "binary", 1.0, execution)


# --- structural lint -------------------------------------------------------------


def test_lint_accepts_conforming_code():
    assert lint_solver(ASSIST_SOLVER, set()) == []
    assert lint_solver(PARAMETRIC_SOLVER, set()) == []


def test_lint_missing_entry():
    violations = lint_solver("# solve-params: none\nx = 1\n", set())
    assert any("solve" in v for v in violations)


def test_lint_wrong_first_param():
    code = "# solve-params: none\n\ndef solve(data):\n    return 1\n"
    assert any("tools" in v for v in violations_of(code))


def violations_of(code):
    return lint_solver(code, set())


def test_lint_rejects_varargs():
    code = "# solve-params: none\n\ndef solve(tools, *args):\n    return 1\n"
    assert any("*args" in v for v in violations_of(code))


def test_lint_requires_defaults():
    code = "# solve-params:\n#   k: int = 1\n\ndef solve(tools, k):\n    return k\n"
    assert any("default" in v for v in violations_of(code))


def test_lint_missing_header():
    code = "def solve(tools):\n    return 1\n"
    assert any("header" in v for v in violations_of(code))


def test_lint_header_signature_mismatch():
    code = "# solve-params:\n#   wrong: int = 1\n\ndef solve(tools, right=1):\n    return right\n"
    violations = violations_of(code)
    assert any("right" in v for v in violations)
    assert any("wrong" in v for v in violations)


def test_lint_undeclared_tool_named():
    code = '''# solve-params: none

def solve(tools):
    return tools["Ghost_Tool"].execute()
'''
    violations = lint_solver(code, {"Real_Tool"})
    assert any("Ghost_Tool" in v for v in violations)
    assert lint_solver(code, {"Ghost_Tool"}) == []


def test_lint_syntax_error():
    assert any("syntax" in v for v in lint_solver("def solve(:", set()))


def test_extract_tool_references():
    code = 'a = tools["X_One"].execute()\nb = tools[\'Y_Two\'].execute()\n'
    assert extract_tool_references(code) == {"X_One", "Y_Two"}


def test_parse_header_variants():
    assert parse_header_params(ASSIST_SOLVER) == {}
    assert parse_header_params(PARAMETRIC_SOLVER) == {
        "beam_size": ("int", "10"),
        "n_best": ("int", "10"),
    }
    assert parse_header_params("def solve(tools):\n    pass\n") is None


# --- planning ----------------------------------------------------------------------


def test_plan_three_subtasks(fixture_registry):
    tools, _ = resolve_tools(["Alpha_Tool"], fixture_registry)
    reply = fenced_json(
        {
            "rationale": "three stages",
            "subtasks": [
                {"description": "load", "tools": [], "packages": ["numpy"]},
                {"description": "process", "tools": ["Alpha_Tool"], "packages": []},
                {"description": "save", "tools": [], "packages": []},
            ],
        }
    )
    result = plan("task", tools, scripted_gateway(reply))
    assert len(result.subtasks) == 3
    assert result.subtasks[1].tools == ["Alpha_Tool"]
    assert result.diagnostics == []


def test_plan_drops_unknown_tool_with_diagnostic(fixture_registry):
    tools, _ = resolve_tools(["Alpha_Tool"], fixture_registry)
    reply = fenced_json(
        {"subtasks": [{"description": "zap it", "tools": ["Zap"], "packages": []}]}
    )
    result = plan("task", tools, scripted_gateway(reply))
    assert result.subtasks[0].tools == []
    assert any("Zap" in d for d in result.diagnostics)


def test_plan_non_json_reply():
    with pytest.raises(PlanParseError):
        plan("task", ToolSet(), scripted_gateway("I think we should just wing it"))


# --- generation / debugging -----------------------------------------------------------


def _one_step_plan() -> Plan:
    from solverforge.solver import Subtask

    return Plan(subtasks=[Subtask(description="compute")])


def test_generate_code_accepts_conforming_reply():
    gateway = scripted_gateway(fenced(ASSIST_SOLVER))
    code = generate_code("task", ToolSet(), _one_step_plan(), load_code_template(), gateway)
    assert code == ASSIST_SOLVER.strip("\n")


def test_generate_code_missing_entry_is_template_violation():
    gateway = scripted_gateway(fenced("# solve-params: none\nx = 1"))
    with pytest.raises(TemplateViolationError):
        generate_code("task", ToolSet(), _one_step_plan(), load_code_template(), gateway)


def test_generate_code_undeclared_tool_violation():
    bad = '''# solve-params: none

def solve(tools):
    return tools["Undeclared_Tool"].execute()
'''
    gateway = scripted_gateway(fenced(bad))
    with pytest.raises(TemplateViolationError) as excinfo:
        generate_code("task", ToolSet(), _one_step_plan(), load_code_template(), gateway)
    assert any("Undeclared_Tool" in v for v in excinfo.value.violations)


def test_debug_code_produces_new_candidate():
    captured = {}
    gateway = scripted_gateway(
        fenced(ASSIST_SOLVER), observer=lambda pid, p, r: captured.setdefault("prompt", p)
    )
    fixed = debug_code("task", ToolSet(), BROKEN_SOLVER, "NameError: nope", gateway)
    assert fixed != BROKEN_SOLVER
    assert fixed == ASSIST_SOLVER.strip("\n")
    assert "NameError: nope" in captured["prompt"]


def test_debug_code_identical_reply_accepted():
    gateway = scripted_gateway(fenced(BROKEN_SOLVER))
    out = debug_code("task", ToolSet(), BROKEN_SOLVER, "err", gateway)
    assert out == BROKEN_SOLVER.strip("\n")


def test_debug_code_unfenced_reply():
    gateway = scripted_gateway("just prose, no code")
    with pytest.raises(CodeExtractError):
        debug_code("task", ToolSet(), BROKEN_SOLVER, "err", gateway)


# --- the solve loop ---------------------------------------------------------------------


def test_solve_loop_clean_first_candidate(run_config):
    gateway = scripted_gateway(PLAN_REPLY, fenced(ASSIST_SOLVER))
    outcome = solve_loop(_assist_spec(), passing_provider, gateway, run_config)
    assert outcome.score == 1.0
    assert outcome.cycles == 1
    assert outcome.debugs_per_cycle == [0]
    assert outcome.result.ok
    assert outcome.result.result_payload == 42


def test_solve_loop_two_debugs_then_clean(run_config):
    gateway = scripted_gateway(
        PLAN_REPLY,
        fenced(BROKEN_SOLVER),
        fenced(BROKEN_SOLVER.replace("%s", "%d")),
        fenced(ASSIST_SOLVER),
    )
    outcome = solve_loop(_assist_spec(), passing_provider, gateway, run_config)
    assert outcome.cycles == 1
    assert outcome.debugs_per_cycle == [2]
    assert outcome.score == 1.0


def test_solve_loop_replans_after_debug_budget(run_config):
    gateway = scripted_gateway(
        PLAN_REPLY,
        fenced(BROKEN_SOLVER),
        fenced(BROKEN_SOLVER.replace("%s", "%d")),
        PLAN_REPLY,
        fenced(ASSIST_SOLVER),
    )
    config = SolveConfig(max_debug=1, max_cycles=2)
    outcome = solve_loop(_assist_spec(), passing_provider, gateway, run_config, config=config)
    assert outcome.cycles == 2
    assert outcome.debugs_per_cycle == [1, 0]
    assert all(d <= config.max_debug for d in outcome.debugs_per_cycle)


def test_solve_loop_exhaustion_carries_best_partial(run_config):
    def scoring_zero(spec, code, execution):
        return VerifiedPair(code, "stub", "binary", 0.0, execution)

    gateway = scripted_gateway(PLAN_REPLY, fenced(ASSIST_SOLVER))
    config = SolveConfig(max_cycles=1)
    with pytest.raises(SolveExhaustedError) as excinfo:
        solve_loop(_assist_spec(), scoring_zero, gateway, run_config, config=config)
    best = excinfo.value.best_partial
    assert best is not None
    assert best.score == 0.0


def test_solve_loop_opt_accepts_any_finite_score(run_config):
    def scoring_low(spec, code, execution):
        return VerifiedPair(code, "stub", "scored", 0.27, execution)

    spec = _assist_spec()
    spec.task_type = "opt"
    gateway = scripted_gateway(PLAN_REPLY, fenced(ASSIST_SOLVER))
    outcome = solve_loop(spec, scoring_low, gateway, run_config)
    assert outcome.score == 0.27


def test_solve_loop_transcript_completeness(run_config):
    transcript = Transcript()
    gateway = scripted_gateway(
        PLAN_REPLY,
        fenced(BROKEN_SOLVER),
        fenced(ASSIST_SOLVER),
        observer=lambda pid, p, r: transcript.record("prompt", prompt_id=pid),
    )
    outcome = solve_loop(
        _assist_spec(), passing_provider, gateway, run_config, transcript=transcript
    )
    executions = transcript.of_kind("execution")
    assert len(executions) == 2  # broken once, fixed once
    assert outcome.debugs_per_cycle == [1]
    statuses = [e["status"] for e in executions]
    assert statuses == ["error", "ok"]


def test_solve_loop_deterministic_transcripts(run_config):
    def run_once() -> str:
        transcript = Transcript()
        gateway = scripted_gateway(
            PLAN_REPLY,
            fenced(BROKEN_SOLVER),
            fenced(ASSIST_SOLVER),
            observer=lambda pid, p, r: transcript.record("prompt", prompt_id=pid, prompt=p, reply=r),
        )
        solve_loop(_assist_spec(), passing_provider, gateway, run_config, transcript=transcript)
        return transcript.to_jsonl()

    assert run_once() == run_once()


def test_execute_candidate_with_kwargs(run_config):
    result = execute_candidate(PARAMETRIC_SOLVER, ToolSet(), run_config, {"beam_size": 20})
    assert result.ok
    assert result.result_payload == 30
