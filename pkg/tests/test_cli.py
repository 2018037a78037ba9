from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from solverforge.benchmark import METRIC_NAMES
from solverforge.cli import main

from conftest import (
    ASSIST_SOLVER,
    BINARY_EVALUATOR,
    PLAN_REPLY,
    SAMPLE_TOOLS_DIR,
    fenced,
    make_bench_suite,
    write_tool,
)


@pytest.fixture
def runner():
    return CliRunner()


def _base_flags(tmp_path, tools_dir):
    return [
        "--tools-dir",
        str(tools_dir),
        "--runs-dir",
        str(tmp_path / "runs"),
        "--parallelism",
        "1",
        "--generations",
        "0",
    ]


def test_tools_validate_sample_set(runner, tmp_path):
    result = runner.invoke(main, ["tools", "validate", "--tools-dir", str(SAMPLE_TOOLS_DIR)])
    assert result.exit_code == 0, result.output
    assert "valid" in result.output


def test_tools_validate_reports_broken_manifest(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    broken = tools_dir / "Broken"
    broken.mkdir(parents=True)
    (broken / "tool.json").write_text(json.dumps({"description": "no name"}))
    result = runner.invoke(main, ["tools", "validate", "--tools-dir", str(tools_dir)])
    assert result.exit_code == 1


def test_tools_list(runner):
    result = runner.invoke(main, ["tools", "list", "--tools-dir", str(SAMPLE_TOOLS_DIR)])
    assert result.exit_code == 0
    assert "Series_Normalizer" in result.output
    assert "Peak_Finder" in result.output


def test_unknown_flag_exits_2(runner):
    result = runner.invoke(main, ["solve", "--does-not-exist", "x"])
    assert result.exit_code == 2


def test_missing_backend_is_usage_error(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    result = runner.invoke(
        main,
        ["solve", "--question", "q", "--type", "assist"] + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 2


def _scripted_file(tmp_path, replies) -> str:
    path = tmp_path / "script.json"
    path.write_text(json.dumps([{"reply": r} for r in replies]))
    return str(path)


def test_solve_scripted_assist(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    scripted = _scripted_file(
        tmp_path, [PLAN_REPLY, fenced(ASSIST_SOLVER), fenced(BINARY_EVALUATOR)]
    )
    result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            "Return the fixture answer 42.",
            "--type",
            "assist",
            "--run-id",
            "cli-demo",
            "--scripted",
            scripted,
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 0, result.output
    assert "score: 1.0" in result.output
    run_dir = tmp_path / "runs" / "cli-demo"
    assert (run_dir / "transcript.jsonl").is_file()
    assert (run_dir / "solver.py").is_file()


def test_solve_question_from_file(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    question_file = tmp_path / "question.txt"
    question_file.write_text("Return the fixture answer 42.\n")
    scripted = _scripted_file(
        tmp_path, [PLAN_REPLY, fenced(ASSIST_SOLVER), fenced(BINARY_EVALUATOR)]
    )
    result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            f"@{question_file}",
            "--type",
            "assist",
            "--scripted",
            scripted,
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 0, result.output


def test_solve_failure_exits_1(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    scripted = _scripted_file(tmp_path, ["no fence", "still none", "third miss"])
    result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            "q",
            "--type",
            "assist",
            "--run-id",
            "fail-demo",
            "--scripted",
            scripted,
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 1
    # failure paths still leave a transcript behind
    assert (tmp_path / "runs" / "fail-demo" / "transcript.jsonl").is_file()


def test_bench_fixture_suite(runner, tmp_path, fixture_tools_dir):
    suite = make_bench_suite(tmp_path / "suite")
    out = tmp_path / "report.json"
    result = runner.invoke(
        main,
        ["bench", "--suite", str(suite), "--trials", "2", "--out", str(out)]
        + _base_flags(tmp_path, fixture_tools_dir),
    )
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    for name in METRIC_NAMES:
        assert name in report["means"], name
    assert report["trials"] == 2
    assert out.with_suffix(".txt").is_file()
    assert out.with_suffix(".csv").is_file()
    assert out.with_suffix(".png").is_file()
    csv_text = out.with_suffix(".csv").read_text()
    assert "fix-assist" in csv_text
    assert "fix-opt" in csv_text


def test_bench_report_byte_identical_across_runs(runner, tmp_path, fixture_tools_dir):
    suite = make_bench_suite(tmp_path / "suite")

    def run_once(label: str) -> bytes:
        out = tmp_path / f"report-{label}.json"
        result = runner.invoke(
            main,
            [
                "bench",
                "--suite",
                str(suite),
                "--trials",
                "2",
                "--out",
                str(out),
                "--no-figures",
                "--tools-dir",
                str(fixture_tools_dir),
                "--runs-dir",
                str(tmp_path / f"runs-{label}"),
                "--parallelism",
                "1",
                "--generations",
                "0",
            ],
        )
        assert result.exit_code == 0, result.output
        return out.read_bytes()

    assert run_once("one") == run_once("two")


def test_solve_with_deny_network_flag(runner, tmp_path):
    import shutil as _shutil

    if _shutil.which("unshare") is None:
        pytest.skip("no unshare on this platform")
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    scripted = _scripted_file(
        tmp_path, [PLAN_REPLY, fenced(ASSIST_SOLVER), fenced(BINARY_EVALUATOR)]
    )
    result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            "Return the fixture answer 42.",
            "--type",
            "assist",
            "--scripted",
            scripted,
            "--deny-network",
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 0, result.output


def test_tools_index_writes_sidecar(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    write_tool(tools_dir, "Beta_Tool")
    result = runner.invoke(main, ["tools", "index", "--tools-dir", str(tools_dir)])
    assert result.exit_code == 0, result.output
    sidecar = tools_dir / "index.json"
    assert sidecar.is_file()
    doc = json.loads(sidecar.read_text())
    assert doc["embedder"].startswith("hashing-")
    assert {e["name"] for e in doc["entries"]} == {"Alpha_Tool", "Beta_Tool"}


def test_solve_reuses_persisted_index(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    index_result = runner.invoke(main, ["tools", "index", "--tools-dir", str(tools_dir)])
    assert index_result.exit_code == 0
    scripted = _scripted_file(
        tmp_path, [PLAN_REPLY, fenced(ASSIST_SOLVER), fenced(BINARY_EVALUATOR)]
    )
    result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            "Return the fixture answer 42.",
            "--type",
            "assist",
            "--scripted",
            scripted,
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 0, result.output


def test_pack_after_solve(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    scripted = _scripted_file(
        tmp_path, [PLAN_REPLY, fenced(ASSIST_SOLVER), fenced(BINARY_EVALUATOR)]
    )
    solve_result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            "Return the fixture answer 42.",
            "--type",
            "assist",
            "--run-id",
            "pack-src",
            "--scripted",
            scripted,
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert solve_result.exit_code == 0, solve_result.output
    out = tmp_path / "packaged"
    pack_result = runner.invoke(
        main,
        ["pack", "--run", "pack-src", "--out", str(out)] + _base_flags(tmp_path, tools_dir),
    )
    assert pack_result.exit_code == 0, pack_result.output
    assert (out / "project_manifest.json").is_file()
    assert (out / "run_solver.py").is_file()


def test_solve_with_pack_out_flag(runner, tmp_path):
    tools_dir = tmp_path / "tools"
    write_tool(tools_dir, "Alpha_Tool")
    scripted = _scripted_file(
        tmp_path, [PLAN_REPLY, fenced(ASSIST_SOLVER), fenced(BINARY_EVALUATOR)]
    )
    out = tmp_path / "bundle"
    result = runner.invoke(
        main,
        [
            "solve",
            "--question",
            "Return the fixture answer 42.",
            "--type",
            "assist",
            "--scripted",
            scripted,
            "--pack-out",
            str(out),
        ]
        + _base_flags(tmp_path, tools_dir),
    )
    assert result.exit_code == 0, result.output
    assert (out / "solver.py").is_file()
