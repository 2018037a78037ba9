"""Command-line surface: solve, bench, tools, pack."""

from __future__ import annotations

import json
import sys
import uuid
from pathlib import Path

import click

from .benchmark import build_report, load_suite
from .config import EngineConfig, load_config
from .errors import ForgeError
from .gateway import Gateway, HttpBackend, ScriptedBackend, load_templates
from .packager import assemble_project, verify_package
from .pipeline import make_run_config, run_pipeline, run_suite
from .registry import load_registry, resolve_tools, validate_spec
from .reporting import (
    format_table,
    render_fitness_history,
    render_metrics_figure,
    write_records_csv,
)
from .retrieval import (
    HashingEmbedder,
    RemoteEmbedder,
    build_index,
    embedder_tag,
    load_index,
    save_index,
)
from .solver import extract_tool_references
from .transcript import load_transcript

_CONFIG_FLAGS = (
    click.option("--tools-dir", default=None, help="Directory of tool manifests."),
    click.option("--prompts-dir", default=None, help="Directory of prompt template files."),
    click.option("--runs-dir", default=None, help="Where run artifacts are written."),
    click.option("--endpoint", default=None, help="OpenAI-compatible chat endpoint URL."),
    click.option("--model", default=None, help="Model name for live runs."),
    click.option("--api-key", default=None, help="Bearer token for the endpoint."),
    click.option("--scripted", default=None, help="JSON file of canned replies (offline mode)."),
    click.option("--k", type=int, default=None, help="Tools retrieved per query."),
    click.option("--generations", type=int, default=None, help="Evolution generations (opt tasks)."),
    click.option("--capacity", type=int, default=None, help="Evolution population capacity."),
    click.option("--max-debug", type=int, default=None, help="Debug attempts per cycle."),
    click.option("--max-cycles", type=int, default=None, help="Plan/generate cycles."),
    click.option("--max-referee", type=int, default=None, help="Referee rounds per verification."),
    click.option("--timeout", type=float, default=None, help="Per-execution timeout (seconds)."),
    click.option("--parallelism", type=int, default=None, help="Concurrent executions/trials."),
    click.option("--seed", "evolution_seed", type=int, default=None, help="Evolution RNG seed."),
    click.option(
        "--deny-network",
        "deny_network",
        is_flag=True,
        default=None,
        help="Best-effort: run generated code without network access where supported.",
    ),
    click.option("--config", "config_path", default=None, help="Path to a solverforge.toml file."),
)


def _with_config_flags(fn):
    for flag in reversed(_CONFIG_FLAGS):
        fn = flag(fn)
    return fn


def _build_engine(kwargs: dict) -> EngineConfig:
    config_path = kwargs.pop("config_path", None)
    flags = {k: v for k, v in kwargs.items() if v is not None}
    return load_config(flags=flags, config_path=config_path)


def _make_gateway(config: EngineConfig) -> Gateway:
    templates = load_templates(config.prompts_dir or None)
    if config.scripted:
        backend = ScriptedBackend.from_file(config.scripted)
        return Gateway(backend, model="scripted", templates=templates, backoff_base=0.0)
    if not config.endpoint:
        raise click.UsageError("either --scripted or --endpoint is required")
    backend = HttpBackend(config.endpoint, api_key=config.api_key)
    return Gateway(backend, model=config.model or "default", templates=templates)


def _make_embedder(config: EngineConfig):
    if config.embed_endpoint:
        return RemoteEmbedder(config.embed_endpoint, config.embed_model or "default")
    return HashingEmbedder()


def _index_sidecar(config: EngineConfig) -> Path:
    return Path(config.tools_dir) / "index.json"


def _make_index(config: EngineConfig, registry):
    """Load the persisted index when it matches the configured embedder, else build."""
    embedder = _make_embedder(config)
    sidecar = _index_sidecar(config)
    if sidecar.is_file():
        try:
            return load_index(sidecar, embedder=embedder, require_tag=embedder_tag(embedder))
        except ForgeError:
            pass  # stale or foreign index: rebuild from the registry
    return build_index(registry, embedder)


@click.group()
def main():
    """Turn natural-language computational tasks into verified, optimized solver code."""


@main.command()
@click.option("--question", required=True, help="The task text, or @path/to/file to read it.")
@click.option("--type", "task_type", type=click.Choice(["auto", "assist", "opt"]), default="auto")
@click.option("--run-id", default=None, help="Run directory name (default: random).")
@click.option("--pack-out", default=None, help="Also package the final solver into this directory.")
@_with_config_flags
def solve(question, task_type, run_id, pack_out, **kwargs):
    """Analyze, solve, verify, and (for opt tasks) evolve one question."""
    config = _build_engine(kwargs)
    if question.startswith("@"):
        question = Path(question[1:]).read_text().strip()
    registry = load_registry(config.tools_dir)
    index = _make_index(config, registry)
    gateway = _make_gateway(config)
    run_dir = Path(config.runs_dir) / (run_id or uuid.uuid4().hex[:12])
    forced = None if task_type == "auto" else task_type
    try:
        result = run_pipeline(
            question, registry, index, gateway, run_dir, config=config, forced_type=forced
        )
    except ForgeError as exc:
        click.echo(f"solve failed: {exc}", err=True)
        click.echo(f"transcript: {run_dir / 'transcript.jsonl'}", err=True)
        sys.exit(1)
    click.echo(f"run: {run_dir}")
    click.echo(f"task type: {result.spec.task_type}")
    click.echo(f"score: {result.final_score}")
    if result.evolved:
        history_path = run_dir / "evolution.jsonl"
        figure_path = run_dir / "fitness_history.png"
        render_fitness_history([r.to_dict() for r in result.evolved.history], figure_path)
        click.echo(f"evolution history: {history_path}")
        click.echo(f"fitness figure: {figure_path}")
    if pack_out:
        tools, _ = resolve_tools(
            sorted(extract_tool_references(result.final_code)), registry, strict=True
        )
        manifest = assemble_project(
            result.final_code,
            result.outcome.evaluator_code,
            tools,
            pack_out,
            task_id=run_dir.name,
            provenance={"score": result.final_score},
        )
        click.echo(f"packaged: {manifest.project_dir}")
    sys.exit(0)


@main.command()
@click.option("--suite", required=True, help="Directory of task directories.")
@click.option("--trials", type=int, default=3, show_default=True)
@click.option("--out", default="report.json", show_default=True, help="Report JSON path.")
@click.option("--figures/--no-figures", default=True, show_default=True)
@_with_config_flags
def bench(suite, trials, out, figures, **kwargs):
    """Run a task suite and emit the metric report (JSON + table + CSV + figures)."""
    config = _build_engine(kwargs)
    registry = load_registry(config.tools_dir)
    index = _make_index(config, registry)
    tasks = load_suite(suite)
    runs_root = Path(config.runs_dir) / "bench"
    gateway_factory = None
    if config.endpoint:
        gateway_factory = lambda task, trial: _make_gateway(config)  # noqa: E731
    try:
        records = run_suite(
            tasks, registry, index, config, runs_root, trials=trials, gateway_factory=gateway_factory
        )
        report = build_report(records, trials=trials)
    except ForgeError as exc:
        click.echo(f"bench failed: {exc}", err=True)
        sys.exit(1)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    table = format_table(report)
    table_path = out_path.with_suffix(".txt")
    table_path.write_text(table)
    csv_path = out_path.with_suffix(".csv")
    write_records_csv(records, csv_path)
    click.echo(table, nl=False)
    click.echo(f"report: {out_path}")
    click.echo(f"csv: {csv_path}")
    if figures:
        figure_path = out_path.with_suffix(".png")
        render_metrics_figure(report, figure_path)
        click.echo(f"figure: {figure_path}")
    sys.exit(0)


@main.group()
def tools():
    """Inspect and validate the tool registry."""


@tools.command("list")
@_with_config_flags
def tools_list(**kwargs):
    """List registered tools with their descriptions."""
    config = _build_engine(kwargs)
    registry = load_registry(config.tools_dir)
    for name in registry.names():
        spec = registry.specs[name]
        click.echo(f"{name}: {spec.description.splitlines()[0] if spec.description else ''}")
    for note in registry.diagnostics:
        click.echo(f"warning: {note}", err=True)
    sys.exit(0)


@tools.command("index")
@click.option("--out", default=None, help="Sidecar path (default: <tools-dir>/index.json).")
@_with_config_flags
def tools_index(out, **kwargs):
    """Embed every tool description and persist the retrieval index sidecar."""
    config = _build_engine(kwargs)
    registry = load_registry(config.tools_dir)
    index = build_index(registry, _make_embedder(config))
    path = Path(out) if out else _index_sidecar(config)
    save_index(index, path)
    click.echo(f"indexed {len(index)} tools -> {path}")
    sys.exit(0)


@tools.command("validate")
@_with_config_flags
def tools_validate(**kwargs):
    """Validate every manifest; exit 1 when any violation or load diagnostic exists."""
    config = _build_engine(kwargs)
    registry = load_registry(config.tools_dir)
    failures = list(registry.diagnostics)
    for name in registry.names():
        for violation in validate_spec(registry.specs[name]):
            failures.append(f"{name}: {violation}")
    if failures:
        for failure in failures:
            click.echo(failure, err=True)
        sys.exit(1)
    click.echo(f"{len(registry)} tools valid")
    sys.exit(0)


@main.command()
@click.option("--run", "run_id", required=True, help="Run id under the runs directory.")
@click.option("--out", required=True, help="Output project directory.")
@_with_config_flags
def pack(run_id, out, **kwargs):
    """Package a finished run's solver into a standalone project."""
    config = _build_engine(kwargs)
    run_dir = Path(config.runs_dir) / run_id
    solver_path = run_dir / "solver.py"
    if not solver_path.is_file():
        click.echo(f"no solver.py under {run_dir}", err=True)
        sys.exit(1)
    solver_code = solver_path.read_text()
    evaluator_path = run_dir / "evaluator.py"
    evaluator_code = evaluator_path.read_text() if evaluator_path.is_file() else None
    registry = load_registry(config.tools_dir)
    try:
        toolset, _ = resolve_tools(
            sorted(extract_tool_references(solver_code)), registry, strict=True
        )
        manifest = assemble_project(
            solver_code, evaluator_code, toolset, out, task_id=run_id
        )
        ok, diagnostics = verify_package(manifest, make_run_config(config, run_dir))
    except ForgeError as exc:
        click.echo(f"pack failed: {exc}", err=True)
        sys.exit(1)
    if not ok:
        click.echo(f"package verification failed: {diagnostics}", err=True)
        sys.exit(1)
    click.echo(f"packaged and verified: {out}")
    sys.exit(0)


@main.command("show-transcript")
@click.argument("path")
def show_transcript(path):
    """Pretty-print a transcript JSONL file."""
    for event in load_transcript(path):
        kind = event.pop("kind", "?")
        click.echo(f"[{kind}] " + json.dumps(event)[:200])
    sys.exit(0)


if __name__ == "__main__":
    main()
