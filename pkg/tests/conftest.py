"""Shared fixtures: fixture tool registries, scripted gateways, canned code."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from solverforge.executor import RunConfig
from solverforge.gateway import Gateway, ScriptedBackend
from solverforge.registry import Registry, load_registry

SAMPLE_TOOLS_DIR = Path(__file__).resolve().parent.parent / "sample_tools"

ECHO_ENTRY = '''import json
import sys

with open(sys.argv[1]) as fh:
    request = json.load(fh)
with open(sys.argv[2], "w") as fh:
    json.dump({"echo": request}, fh)
'''


def write_tool(
    tools_dir: Path,
    name: str,
    description: str = "A fixture tool.",
    inputs=None,
    outputs=None,
    dependencies=(),
    tags=(),
    entry_body: str = ECHO_ENTRY,
    usage_examples=("result = tools[\"NAME\"].execute(x=1)",),
    **overrides,
) -> Path:
    """Create <tools_dir>/<name>/{tool.json, run.py} and return the tool dir."""
    tool_dir = tools_dir / name
    tool_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "name": name,
        "description": description,
        "inputs": inputs
        if inputs is not None
        else [{"name": "x", "type": "int", "explanation": "demo input"}],
        "outputs": outputs
        if outputs is not None
        else [{"name": "echo", "type": "dict", "explanation": "request echoed back"}],
        "usage_examples": [u.replace("NAME", name) for u in usage_examples],
        "dependencies": list(dependencies),
        "source_link": "https://example.invalid/" + name,
        "build_command": "true",
        "entry": "run.py",
        "metadata": {"limitations": "", "related_papers": [], "tags": list(tags)},
    }
    doc.update(overrides)
    (tool_dir / "tool.json").write_text(json.dumps(doc, indent=2))
    (tool_dir / "run.py").write_text(entry_body)
    return tool_dir


def fenced(code: str, tag: str = "python") -> str:
    return f"```{tag}\n{code}\n```"


def fenced_json(payload) -> str:
    return fenced(json.dumps(payload), tag="json")


def scripted_gateway(*replies, observer=None) -> Gateway:
    """Gateway over a scripted backend with retry sleeps disabled."""
    return Gateway(ScriptedBackend(list(replies)), backoff_base=0.0, observer=observer)


PLAN_REPLY = fenced_json(
    {
        "rationale": "single step suffices",
        "subtasks": [{"description": "compute the value", "tools": [], "packages": []}],
    }
)

ASSIST_SOLVER = '''# solve-params: none

# main entry point
def solve(tools):
    """Return the fixture answer."""
    return 42
'''

BINARY_EVALUATOR = '''import json

def evaluate(result, reference_path):
    assert result == 42, f"unexpected result: {result!r}"
    return 1

if __name__ == "__main__":
    with open("args.json") as fh:
        args = json.load(fh)
    with open(args["result_path"]) as fh:
        manifest = json.load(fh)
    score = evaluate(manifest.get("value"), args.get("reference_path", ""))
    with open("score.json", "w") as fh:
        json.dump({"score": float(score)}, fh)
'''


def value_solver(value: float) -> str:
    """A template-conforming solver returning a fixed numeric value."""
    return f'''# solve-params: none

# main entry point
def solve(tools):
    """Return a fixed objective value."""
    return {value!r}
'''


PASSTHROUGH_EVALUATOR = '''import json

def evaluate(result, reference_path):
    return float(result)

if __name__ == "__main__":
    with open("args.json") as fh:
        args = json.load(fh)
    with open(args["result_path"]) as fh:
        manifest = json.load(fh)
    score = evaluate(manifest.get("value"), args.get("reference_path", ""))
    with open("score.json", "w") as fh:
        json.dump({"score": float(score)}, fh)
'''


TOOL_USING_ASSIST_SOLVER = '''# solve-params: none

# main entry point
def solve(tools):
    """Echo through the alpha tool, then return the fixture answer."""
    tools["Alpha_Tool"].execute(x=1)
    return 42
'''

FORMALIZE_REPLY = fenced_json(
    {
        "inputs": "none",
        "output_format": "a number",
        "instructions": "emit the objective value",
        "goal": "maximize the emitted value",
        "reference_answer": 0,
    }
)

EVAL_PLAN_REPLY = fenced_json(
    {"rationale": "one check", "subtasks": [{"description": "read the value", "tools": []}]}
)


def make_bench_suite(suite_dir: Path, opt_value: float = 0.5) -> Path:
    """Two-task fixture suite (one assist, one opt) with per-task scripted replies."""
    assist_dir = suite_dir / "fix-assist"
    assist_dir.mkdir(parents=True)
    (assist_dir / "task.json").write_text(
        json.dumps(
            {
                "id": "fix-assist",
                "question": "Run the alpha pipeline and return the canonical number.",
                "task_type": "assist",
                "candidate_tools": ["Alpha_Tool"],
            }
        )
    )
    (assist_dir / "solve.py").write_text(TOOL_USING_ASSIST_SOLVER)
    (assist_dir / "evaluate.py").write_text(BINARY_EVALUATOR)
    (assist_dir / "scripted.json").write_text(
        json.dumps(
            [
                {"reply": PLAN_REPLY},
                {"reply": fenced(TOOL_USING_ASSIST_SOLVER)},
                {"reply": fenced(BINARY_EVALUATOR)},
            ]
        )
    )

    opt_dir = suite_dir / "fix-opt"
    opt_dir.mkdir(parents=True)
    (opt_dir / "task.json").write_text(
        json.dumps(
            {
                "id": "fix-opt",
                "question": "Maximize the emitted objective value.",
                "task_type": "opt",
                "candidate_tools": ["Beta_Tool"],
                "train_instances": [
                    {"kwargs": {}, "reference": 0},
                    {"kwargs": {}, "reference": 0},
                ],
                "test_instances": [{"kwargs": {}, "reference": 0}],
            }
        )
    )
    (opt_dir / "solve.py").write_text(value_solver(opt_value))
    (opt_dir / "evaluate.py").write_text(PASSTHROUGH_EVALUATOR)
    (opt_dir / "scripted.json").write_text(
        json.dumps(
            [
                {"reply": FORMALIZE_REPLY},
                {"reply": PLAN_REPLY},
                {"reply": fenced(value_solver(opt_value))},
                {"reply": EVAL_PLAN_REPLY},
                {"reply": fenced(PASSTHROUGH_EVALUATOR)},
            ]
        )
    )
    return suite_dir


@pytest.fixture
def run_config(tmp_path) -> RunConfig:
    return RunConfig(timeout=20.0, workdir_root=str(tmp_path / "work"))


@pytest.fixture
def fast_config(tmp_path) -> RunConfig:
    return RunConfig(timeout=1.0, workdir_root=str(tmp_path / "work"))


@pytest.fixture
def sample_registry() -> Registry:
    return load_registry(SAMPLE_TOOLS_DIR)


@pytest.fixture
def fixture_tools_dir(tmp_path) -> Path:
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool", description="Alpha computes alpha things.")
    write_tool(tools_dir, "Beta_Tool", description="Beta computes beta things.")
    write_tool(tools_dir, "Gamma_Scorer", description="Scores results.", tags=("eval",))
    return tools_dir


@pytest.fixture
def fixture_registry(fixture_tools_dir) -> Registry:
    return load_registry(fixture_tools_dir)
