"""Project construction: a verified solver becomes a self-contained directory.

The assembled layout::

    <out>/solver.py              the solver entry code
    <out>/evaluator.py           its evaluator (when available)
    <out>/run_solver.py          launcher: builds tools, runs solve, writes result.json
    <out>/tools_shim.py          subprocess shim with project-relative tool roots
    <out>/tools/<name>/...       full copies of every referenced tool
    <out>/environment.txt        union of tool dependency strings, sorted
    <out>/project_manifest.json  entry points, tool names, provenance
    <out>/README.md              how to run the packaged solver

Everything inside the directory is path-relative, so a package keeps
working after being moved or copied elsewhere.
"""

from __future__ import annotations

import json
import re
import shlex
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CopyFailureError, DependencyConflictError, UnknownToolError
from .executor import RunConfig, WORKDIR_TOKEN, _build_env, _launch, emit_relative_tools_shim
from .registry import Registry, ToolSet
from .solver import extract_tool_references

MANIFEST_FILE = "project_manifest.json"
ENVIRONMENT_FILE = "environment.txt"
LAUNCHER_FILE = "run_solver.py"
SOLVER_FILE = "solver.py"
EVALUATOR_FILE = "evaluator.py"

_PIN_RE = re.compile(r"^([A-Za-z0-9][A-Za-z0-9._-]*)\s*==\s*(\S+)$")
_NAME_RE = re.compile(r"^([A-Za-z0-9][A-Za-z0-9._-]*)")


@dataclass
class ProjectManifest:
    solver_entry: str
    launcher: str
    tool_names: list[str]
    dependencies: list[str]
    environment_file: str
    task_id: str = ""
    provenance: dict = field(default_factory=dict)
    project_dir: Path | None = None

    def to_dict(self) -> dict:
        return {
            "solver_entry": self.solver_entry,
            "launcher": self.launcher,
            "tool_names": list(self.tool_names),
            "dependencies": list(self.dependencies),
            "environment_file": self.environment_file,
            "task_id": self.task_id,
            "provenance": dict(self.provenance),
        }


def analyze_dependencies(solver_code: str, registry: Registry) -> set[str]:
    """Tool names the solver references; every one must be registered."""
    names = extract_tool_references(solver_code)
    for name in sorted(names):
        if name not in registry:
            raise UnknownToolError(name)
    return names


def aggregate_dependencies(tools: ToolSet) -> list[str]:
    """Union of the tools' dependency strings, deduplicated and sorted.

    Two different exact pins of the same package cannot be satisfied by one
    environment file; that is reported, never silently resolved.
    """
    seen: dict[str, None] = {}
    pins: dict[str, dict[str, list[str]]] = {}
    for handle in tools:
        for dep in handle.spec.dependencies:
            dep = dep.strip()
            if not dep:
                continue
            seen.setdefault(dep, None)
            m = _PIN_RE.match(dep)
            if m:
                package = m.group(1).lower().replace("_", "-")
                pins.setdefault(package, {}).setdefault(m.group(2), []).append(handle.name)
    conflicts = []
    for package, versions in sorted(pins.items()):
        if len(versions) > 1:
            detail = ", ".join(
                f"=={version} (from {', '.join(sorted(set(users)))})"
                for version, users in sorted(versions.items())
            )
            conflicts.append(f"{package}: {detail}")
    if conflicts:
        raise DependencyConflictError(conflicts)
    return sorted(seen)


_LAUNCHER_SOURCE = '''"""Launcher for the packaged solver.

Run from anywhere: reads keyword arguments from ./args.json (if present),
builds the packaged tools, calls solve, and writes ./result.json.
"""
import importlib.util
import json
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

from tools_shim import build_tools


def _load_solver():
    spec = importlib.util.spec_from_file_location("packaged_solver", os.path.join(HERE, "solver.py"))
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


if __name__ == "__main__":
    kwargs = {}
    if os.path.exists("args.json"):
        with open("args.json") as fh:
            kwargs = json.load(fh)
    module = _load_solver()
    value = module.solve(build_tools(), **kwargs)
    try:
        text = json.dumps({"status": "ok", "value": value})
    except TypeError:
        text = json.dumps({"status": "ok", "value": repr(value)})
    with open("result.json", "w") as fh:
        fh.write(text)
'''


def assemble_project(
    solver_code: str,
    evaluator_code: str | None,
    tools: ToolSet,
    out_dir: str | Path,
    task_id: str = "",
    provenance: dict | None = None,
) -> ProjectManifest:
    """Copy code and tools into a standalone, relocatable project directory.

    Deterministic for fixed inputs: file contents (manifest included) carry
    no timestamps, so re-assembly is byte-identical.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / SOLVER_FILE).write_text(solver_code)
        if evaluator_code:
            (out_dir / EVALUATOR_FILE).write_text(evaluator_code)
        (out_dir / LAUNCHER_FILE).write_text(_LAUNCHER_SOURCE)

        shim_mapping = {}
        for handle in tools:
            dest = out_dir / "tools" / handle.name
            if dest.exists():
                shutil.rmtree(dest)
            shutil.copytree(handle.root_dir, dest)
            shim_mapping[handle.name] = {"root": f"tools/{handle.name}", "entry": handle.entry}
        (out_dir / "tools_shim.py").write_text(emit_relative_tools_shim(shim_mapping))
    except OSError as exc:
        raise CopyFailureError(str(exc)) from exc

    dependencies = aggregate_dependencies(tools)
    (out_dir / ENVIRONMENT_FILE).write_text("".join(f"{d}\n" for d in dependencies))

    referenced = extract_tool_references(solver_code)
    missing = sorted(referenced - set(tools.names()))
    if missing:
        raise UnknownToolError(missing[0])

    manifest = ProjectManifest(
        solver_entry=SOLVER_FILE,
        launcher=LAUNCHER_FILE,
        tool_names=sorted(tools.names()),
        dependencies=dependencies,
        environment_file=ENVIRONMENT_FILE,
        task_id=task_id,
        provenance=dict(provenance or {}),
        project_dir=out_dir,
    )
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    (out_dir / "README.md").write_text(_readme_stub(manifest))
    return manifest


def _readme_stub(manifest: ProjectManifest) -> str:
    lines = [
        "# Packaged solver",
        "",
        f"Task: {manifest.task_id or '(unspecified)'}",
        "",
        "Run it with:",
        "",
        "    python run_solver.py",
        "",
        "Optional keyword arguments go in an `args.json` file in the current",
        "directory; the result lands in `result.json`.",
        "",
        f"Bundled tools: {', '.join(manifest.tool_names) or '(none)'}",
        f"Dependencies: see {manifest.environment_file}",
        "",
    ]
    return "\n".join(lines)


def load_manifest(project_dir: str | Path) -> ProjectManifest:
    project_dir = Path(project_dir)
    doc = json.loads((project_dir / MANIFEST_FILE).read_text())
    return ProjectManifest(
        solver_entry=doc["solver_entry"],
        launcher=doc["launcher"],
        tool_names=list(doc["tool_names"]),
        dependencies=list(doc["dependencies"]),
        environment_file=doc["environment_file"],
        task_id=doc.get("task_id", ""),
        provenance=doc.get("provenance", {}),
        project_dir=project_dir,
    )


def verify_package(
    manifest: ProjectManifest,
    run_config: RunConfig,
    sample_kwargs: dict | None = None,
) -> tuple[bool, str]:
    """Smoke-run the packaged solver using only files inside the project.

    Returns (ok, diagnostics); a clean run must produce a result manifest
    with ok status. The launch happens in a scratch subdirectory which is
    removed afterwards, so a verified package is left byte-identical.
    """
    project_dir = manifest.project_dir
    if project_dir is None or not (project_dir / manifest.launcher).is_file():
        return False, "launcher missing from project directory"
    scratch = project_dir / "_smoke"
    scratch.mkdir(exist_ok=True)
    try:
        (scratch / "args.json").write_text(json.dumps(sample_kwargs or {}, sort_keys=True))
        launcher = str((project_dir / manifest.launcher).resolve())
        command = shlex.split(run_config.runner_template.format(script=shlex.quote(launcher)))
        returncode, stdout, stderr, timed_out, _ = _launch(
            command, scratch, run_config.timeout, _build_env(run_config)
        )
        if timed_out:
            return False, f"smoke run timed out after {run_config.timeout}s"
        if returncode != 0:
            return False, stderr.replace(str(scratch), WORKDIR_TOKEN)[-2000:]
        result_path = scratch / "result.json"
        if not result_path.is_file():
            return False, "smoke run wrote no result.json"
        try:
            doc = json.loads(result_path.read_text())
        except json.JSONDecodeError as exc:
            return False, f"unreadable result.json: {exc}"
        if not isinstance(doc, dict) or doc.get("status") != "ok":
            return False, f"smoke result not ok: {doc!r}"
        return True, ""
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
