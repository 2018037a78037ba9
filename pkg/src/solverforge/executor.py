"""Controlled execution of generated solver and evaluator scripts.

Every run gets a fresh private working directory; the script is written
there together with an ``args.json`` input map and any support files, then
launched as a subprocess in its own session. Results come back through
file manifests with fixed names: solvers write ``result.json``
({"status", "value"|"files", "error"}) and evaluators write ``score.json``
({"score": x}). On deadline the whole process group is killed.

This is a floor, not full OS-level isolation: scripts run with a minimal
environment and their own cwd, but no container or cgroup is involved.
"""

from __future__ import annotations

import json
import os
import shlex
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EvaluatorCrashedError, SandboxSetupError, ScoreMissingError
from .registry import ToolSet

RESULT_MANIFEST = "result.json"
SCORE_MANIFEST = "score.json"
ARGS_FILE = "args.json"
SCRIPT_NAME = "script.py"
SHIM_NAME = "tools_shim.py"

# debug prompts need the traceback tail, not megabytes
DIAGNOSTIC_CAP = 16 * 1024
TIMEOUT_GRACE = 2.0

ELISION_MARKER = "[...truncated...]\n"

STATUS_OK = "ok"
STATUS_ERROR = "error"
STATUS_TIMEOUT = "timeout"

# stand-in for the per-run working directory in diagnostics, so error tails
# (which feed debug prompts and transcripts) are identical across runs
WORKDIR_TOKEN = "<work>"


@dataclass
class RunConfig:
    runner_template: str = f"{sys.executable} {{script}}"
    timeout: float = 60.0
    workdir_root: str | None = None
    stdout_cap: int = DIAGNOSTIC_CAP
    env_allowlist: tuple[str, ...] = ()
    max_parallel: int = 4
    # best-effort: wraps runs in an empty network namespace where the
    # platform allows it (unshare -n -r); silently a no-op elsewhere
    deny_network: bool = False
    _gate: threading.BoundedSemaphore = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.runner_template.count("{script}") != 1:
            raise ValueError("runner_template must contain exactly one {script} placeholder")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self._gate = threading.BoundedSemaphore(self.max_parallel)


def _network_guard_prefix() -> list[str]:
    if shutil.which("unshare"):
        return ["unshare", "-n", "-r"]
    return []


def build_command(config: RunConfig, script_name: str) -> list[str]:
    command = shlex.split(config.runner_template.format(script=script_name))
    if config.deny_network:
        command = _network_guard_prefix() + command
    return command


@dataclass
class ExecutionResult:
    status: str
    result_payload: object = None
    error_text: str | None = None
    stdout_tail: str = ""
    stderr_tail: str = ""
    wall_time: float = 0.0
    workdir: str = ""
    result_path: str = ""
    manifest: dict | None = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def _scrub(self, value):
        if isinstance(value, str) and self.workdir:
            return value.replace(self.workdir, WORKDIR_TOKEN)
        if isinstance(value, dict):
            return {k: self._scrub(v) for k, v in value.items()}
        if isinstance(value, list):
            return [self._scrub(v) for v in value]
        return value

    def summary(self) -> dict:
        """Reproducibility-safe digest for transcripts (no wall time, no volatile paths)."""
        out = {"status": self.status}
        if self.status == STATUS_OK:
            out["value"] = self._scrub(self.result_payload)
        else:
            out["error"] = self._scrub(self.error_text)
        return out


@dataclass
class ScoreOutcome:
    score: float  # clamped into [0, 1]
    raw: float  # value as emitted by the evaluator
    execution: ExecutionResult


def truncate_diagnostics(text: str, cap: int) -> str:
    """Keep the final ``cap`` bytes of text, marking the elision."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    encoded = text.encode("utf-8", errors="replace")
    if len(encoded) <= cap:
        return text
    tail = encoded[-cap:].decode("utf-8", errors="replace")
    return ELISION_MARKER + tail


def _build_env(config: RunConfig) -> dict[str, str]:
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        # deterministic hashing inside generated scripts
        "PYTHONHASHSEED": "0",
        "PYTHONDONTWRITEBYTECODE": "1",
    }
    for name in config.env_allowlist:
        if name in os.environ:
            env[name] = os.environ[name]
    return env


def _make_workdir(config: RunConfig) -> Path:
    try:
        root = config.workdir_root
        if root:
            Path(root).mkdir(parents=True, exist_ok=True)
        return Path(tempfile.mkdtemp(prefix="run-", dir=root))
    except OSError as exc:
        raise SandboxSetupError(f"cannot create working directory: {exc}") from exc


def _launch(command: list[str], cwd: Path, timeout: float, env: dict[str, str]):
    """Run a command in its own session; on deadline kill the whole group.

    Returns (returncode, stdout, stderr, timed_out, wall_time).
    """
    start = time.monotonic()
    proc = subprocess.Popen(
        command,
        cwd=str(cwd),
        env=env,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        start_new_session=True,
    )
    try:
        stdout, stderr = proc.communicate(timeout=timeout)
        timed_out = False
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        stdout, stderr = proc.communicate()
    return proc.returncode, stdout or "", stderr or "", timed_out, time.monotonic() - start


def run_script(
    code: str,
    config: RunConfig,
    inputs: dict | None = None,
    support_files: dict[str, str] | None = None,
) -> ExecutionResult:
    """Execute a script in a fresh working directory under the run contract.

    ``inputs`` is serialized to ``args.json`` in the workdir; support files
    (e.g. the generated tool shim) are written alongside the script. A clean
    exit must leave a parseable ``result.json``; any nonzero exit or missing
    manifest is an error whose diagnostics carry the stderr tail.
    """
    if not code.strip():
        raise ValueError("code must be non-empty")
    workdir = _make_workdir(config)
    script_path = workdir / SCRIPT_NAME
    script_path.write_text(code)
    (workdir / ARGS_FILE).write_text(json.dumps(inputs or {}, sort_keys=True))
    for name, content in (support_files or {}).items():
        (workdir / name).write_text(content)

    command = build_command(config, SCRIPT_NAME)
    with config._gate:
        returncode, stdout, stderr, timed_out, wall = _launch(
            command, workdir, config.timeout, _build_env(config)
        )

    def scrub(text: str) -> str:
        return text.replace(str(workdir), WORKDIR_TOKEN)

    stdout_tail = scrub(truncate_diagnostics(stdout, config.stdout_cap))
    stderr_tail = scrub(truncate_diagnostics(stderr, config.stdout_cap))
    result_path = workdir / RESULT_MANIFEST

    if timed_out:
        return ExecutionResult(
            status=STATUS_TIMEOUT,
            error_text=f"timed out after {config.timeout}s\n{stderr_tail}".rstrip(),
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
            wall_time=wall,
            workdir=str(workdir),
        )
    if returncode != 0:
        return ExecutionResult(
            status=STATUS_ERROR,
            error_text=stderr_tail or f"exit code {returncode}",
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
            wall_time=wall,
            workdir=str(workdir),
        )
    if not result_path.is_file():
        return ExecutionResult(
            status=STATUS_ERROR,
            error_text=f"script exited cleanly but wrote no {RESULT_MANIFEST}",
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
            wall_time=wall,
            workdir=str(workdir),
        )
    try:
        manifest = json.loads(result_path.read_text())
    except (json.JSONDecodeError, OSError) as exc:
        return ExecutionResult(
            status=STATUS_ERROR,
            error_text=f"unreadable {RESULT_MANIFEST}: {exc}",
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
            wall_time=wall,
            workdir=str(workdir),
        )
    if isinstance(manifest, dict) and manifest.get("status") == STATUS_ERROR:
        return ExecutionResult(
            status=STATUS_ERROR,
            error_text=str(manifest.get("error", "script reported an error")),
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
            wall_time=wall,
            workdir=str(workdir),
            manifest=manifest,
        )
    payload = manifest.get("value") if isinstance(manifest, dict) else manifest
    if payload is None and isinstance(manifest, dict) and "files" in manifest:
        payload = {"files": manifest["files"]}
    return ExecutionResult(
        status=STATUS_OK,
        result_payload=payload,
        stdout_tail=stdout_tail,
        stderr_tail=stderr_tail,
        wall_time=wall,
        workdir=str(workdir),
        result_path=str(result_path),
        manifest=manifest if isinstance(manifest, dict) else {"value": manifest},
    )


def run_evaluator(
    evaluator_code: str,
    result_path: str | Path,
    a_ref_path: str | Path,
    config: RunConfig,
) -> ScoreOutcome:
    """Run an evaluator script against a result manifest and reference data.

    The evaluator receives absolute result/reference paths through
    ``args.json`` and must write ``score.json``; its score is clamped into
    [0, 1] with the raw value preserved for callers that need it.
    """
    result_path = Path(result_path).resolve()
    a_ref_path = Path(a_ref_path).resolve()
    if not result_path.is_file():
        raise FileNotFoundError(f"result manifest not found: {result_path}")
    workdir = _make_workdir(config)
    script_path = workdir / SCRIPT_NAME
    script_path.write_text(evaluator_code)
    args = {"result_path": str(result_path), "reference_path": str(a_ref_path)}
    (workdir / ARGS_FILE).write_text(json.dumps(args, sort_keys=True))

    command = build_command(config, SCRIPT_NAME)
    with config._gate:
        returncode, stdout, stderr, timed_out, wall = _launch(
            command, workdir, config.timeout, _build_env(config)
        )
    stderr_tail = (
        truncate_diagnostics(stderr, config.stdout_cap)
        .replace(str(workdir), WORKDIR_TOKEN)
        .replace(str(result_path.parent), "<solver-work>")
    )
    if timed_out:
        raise EvaluatorCrashedError(f"evaluator timed out after {config.timeout}s\n{stderr_tail}")
    if returncode != 0:
        raise EvaluatorCrashedError(stderr_tail or f"evaluator exit code {returncode}")

    score_path = workdir / SCORE_MANIFEST
    if not score_path.is_file():
        raise ScoreMissingError(f"evaluator wrote no {SCORE_MANIFEST}")
    try:
        doc = json.loads(score_path.read_text())
        raw = float(doc["score"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ScoreMissingError(f"unusable {SCORE_MANIFEST}: {exc}") from exc
    if raw != raw:  # NaN
        raise ScoreMissingError("evaluator emitted NaN score")
    clamped = max(0.0, min(1.0, raw))
    execution = ExecutionResult(
        status=STATUS_OK,
        result_payload={"score": raw},
        stdout_tail=truncate_diagnostics(stdout, config.stdout_cap),
        stderr_tail=stderr_tail,
        wall_time=wall,
        workdir=str(workdir),
        result_path=str(score_path),
    )
    return ScoreOutcome(score=clamped, raw=raw, execution=execution)


# --- generated-code scaffolding ----------------------------------------------

SOLVER_HARNESS = '''

if __name__ == "__main__":
    import json as _json
    with open("args.json") as _fh:
        _kwargs = _json.load(_fh)
    try:
        from tools_shim import build_tools as _build_tools
        _tools = _build_tools()
    except ImportError:
        _tools = {}
    _value = solve(_tools, **_kwargs)
    try:
        _text = _json.dumps({"status": "ok", "value": _value})
    except TypeError:
        _text = _json.dumps({"status": "ok", "value": repr(_value)})
    with open("result.json", "w") as _fh:
        _fh.write(_text)
'''


def compose_solver_script(code: str) -> str:
    """Append the runner harness that feeds kwargs to ``solve`` and writes result.json."""
    return code.rstrip("\n") + "\n" + SOLVER_HARNESS


_SHIM_TEMPLATE = '''"""Auto-generated tool shim.

Maps tool names to subprocess launches of each tool's entry point while
preserving the in-process calling shape: tools["Name"].execute(**kwargs)
returns the tool's output dict.
"""
import json
import os
import subprocess
import sys
import tempfile

_TOOLS = {tools_json}

_BASE = {base_expr}


class ToolProxy:
    def __init__(self, name, root, entry):
        self.name = name
        self.root = root
        self.entry = entry

    def execute(self, **kwargs):
        call_dir = tempfile.mkdtemp(prefix=self.name + "-", dir=os.getcwd())
        request_path = os.path.join(call_dir, "request.json")
        response_path = os.path.join(call_dir, "response.json")
        with open(request_path, "w") as fh:
            json.dump(kwargs, fh)
        entry_path = os.path.join(_BASE, self.root, self.entry) if _BASE else os.path.join(self.root, self.entry)
        if entry_path.endswith(".py"):
            cmd = [sys.executable, entry_path, request_path, response_path]
        else:
            cmd = [entry_path, request_path, response_path]
        proc = subprocess.run(cmd, cwd=call_dir, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(
                "tool %s failed (exit %d): %s" % (self.name, proc.returncode, proc.stderr[-2000:])
            )
        with open(response_path) as fh:
            return json.load(fh)


def build_tools():
    return {{name: ToolProxy(name, spec["root"], spec["entry"]) for name, spec in _TOOLS.items()}}
'''


def emit_tools_shim(tools: ToolSet) -> str:
    """Shim with absolute tool roots, for engine-side runs."""
    mapping = {
        h.name: {"root": str(h.root_dir.resolve()), "entry": h.entry} for h in tools
    }
    return _SHIM_TEMPLATE.format(
        tools_json=json.dumps(mapping, indent=2, sort_keys=True), base_expr='""'
    )


def emit_relative_tools_shim(mapping: dict[str, dict]) -> str:
    """Shim whose tool roots are relative to the shim file (for packaged projects)."""
    return _SHIM_TEMPLATE.format(
        tools_json=json.dumps(mapping, indent=2, sort_keys=True),
        base_expr="os.path.dirname(os.path.abspath(__file__))",
    )
