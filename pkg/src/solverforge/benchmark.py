"""Benchmark task model, metric suite, and multi-trial report aggregation.

A task directory holds the full quadruplet::

    <suite>/<task>/task.json    id, question, task_type, candidate_tools,
                                train/test instances (opt only)
    <suite>/<task>/solve.py     reference solver (template-conforming)
    <suite>/<task>/evaluate.py  task evaluator (executor score contract)
    <suite>/<task>/scripted.json   optional canned replies for offline runs

Metrics follow the standard suite over per-trial records:

- pass@1: fraction of tasks whose solution executed without critical error
- tool accuracy: |predicted ∩ reference| / |predicted| over tool name sets
- train/test score (opt): mean over tasks of the mean instance score
- normalized rank: (K - r) / (K - 1) with average ranks for ties, 1 = best
- quality score: 0.5 * assist accuracy + 0.25 * train rank + 0.25 * test rank
- overall pass@1 / tool accuracy: equal-weight mean of the two task types

Reports aggregate each metric across trials as mean plus population
standard deviation.
"""

from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    InconsistentTrialsError,
    KwargsParseError,
    ManifestParseError,
    MissingDirError,
    NoFenceError,
    NoTasksError,
)
from .gateway import ASSIST, OPT, Gateway, PromptId, extract_fenced
from .solver import parse_header_params

TASK_FILE = "task.json"
SOLVE_FILE = "solve.py"
EVALUATE_FILE = "evaluate.py"
SCRIPTED_FILE = "scripted.json"


@dataclass
class Instance:
    kwargs: dict
    reference: object
    question: str | None = None  # set when kwargs must be parsed from a question variant


@dataclass
class TaskSpec:
    id: str
    question: str
    task_type: str
    reference_solver: str
    evaluator: str
    candidate_tools: list[str] = field(default_factory=list)
    train_instances: list[Instance] = field(default_factory=list)
    test_instances: list[Instance] = field(default_factory=list)
    scripted: list | None = None
    dir: Path | None = None


@dataclass
class TrialRecord:
    task_id: str
    trial: int
    task_type: str
    executed: bool
    tools_used: list[str] = field(default_factory=list)
    tools_reference: list[str] = field(default_factory=list)
    assist_score: float | None = None
    train_scores: list[float] = field(default_factory=list)
    test_scores: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def _parse_instance(raw: dict) -> Instance:
    return Instance(
        kwargs=dict(raw.get("kwargs", {})),
        reference=raw.get("reference"),
        question=raw.get("question"),
    )


def load_task(task_dir: str | Path) -> TaskSpec:
    task_dir = Path(task_dir)
    meta_path = task_dir / TASK_FILE
    if not meta_path.is_file():
        raise ManifestParseError(str(meta_path), "missing task.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestParseError(str(meta_path), str(exc))
    task_type = meta.get("task_type", ASSIST)
    if task_type not in (ASSIST, OPT):
        raise ManifestParseError(str(meta_path), f"unknown task_type {task_type!r}")
    train = [_parse_instance(r) for r in meta.get("train_instances", [])]
    test = [_parse_instance(r) for r in meta.get("test_instances", [])]
    if task_type == OPT and (not train or not test):
        raise ManifestParseError(str(meta_path), "opt task needs train and test instances")
    if task_type == ASSIST and (train or test):
        raise ManifestParseError(str(meta_path), "assist task must not carry instances")
    scripted_path = task_dir / SCRIPTED_FILE
    scripted = json.loads(scripted_path.read_text()) if scripted_path.is_file() else None
    return TaskSpec(
        id=str(meta.get("id", task_dir.name)),
        question=str(meta.get("question", "")),
        task_type=task_type,
        reference_solver=(task_dir / SOLVE_FILE).read_text() if (task_dir / SOLVE_FILE).is_file() else "",
        evaluator=(task_dir / EVALUATE_FILE).read_text() if (task_dir / EVALUATE_FILE).is_file() else "",
        candidate_tools=[str(t) for t in meta.get("candidate_tools", [])],
        train_instances=train,
        test_instances=test,
        scripted=scripted,
        dir=task_dir,
    )


def load_suite(suite_dir: str | Path) -> list[TaskSpec]:
    suite_dir = Path(suite_dir)
    if not suite_dir.is_dir():
        raise MissingDirError(str(suite_dir))
    tasks = []
    for task_dir in sorted(p for p in suite_dir.iterdir() if p.is_dir()):
        if (task_dir / TASK_FILE).is_file():
            tasks.append(load_task(task_dir))
    if not tasks:
        raise NoTasksError(f"no task directories under {suite_dir}")
    return tasks


# --- individual metrics --------------------------------------------------------


def pass_at_1(records: list[TrialRecord], task_type: str) -> float:
    subset = [r for r in records if r.task_type == task_type]
    if not subset:
        raise NoTasksError(f"no {task_type} records")
    return sum(1.0 for r in subset if r.executed) / len(subset)


def tool_accuracy(pred: set[str], ref: set[str]) -> float:
    """Intersection over prediction; an empty prediction set scores 0."""
    if not pred:
        return 0.0
    return len(pred & ref) / len(pred)


def mean_tool_accuracy(records: list[TrialRecord], task_type: str) -> float:
    subset = [r for r in records if r.task_type == task_type]
    if not subset:
        raise NoTasksError(f"no {task_type} records")
    return sum(tool_accuracy(set(r.tools_used), set(r.tools_reference)) for r in subset) / len(subset)


def assist_accuracy(records: list[TrialRecord]) -> float:
    subset = [r for r in records if r.task_type == ASSIST]
    if not subset:
        raise NoTasksError("no assist records")
    return sum(r.assist_score or 0.0 for r in subset) / len(subset)


def task_subset_mean(record: TrialRecord, subset: str) -> float:
    scores = record.train_scores if subset == "train" else record.test_scores
    if not scores:
        return 0.0
    return sum(scores) / len(scores)


def subset_score(records: list[TrialRecord], subset: str) -> float:
    """Mean over opt tasks of the per-task mean instance score."""
    if subset not in ("train", "test"):
        raise ValueError("subset must be train or test")
    opt_records = [r for r in records if r.task_type == OPT]
    if not opt_records:
        raise NoTasksError("no opt records")
    return sum(task_subset_mean(r, subset) for r in opt_records) / len(opt_records)


def normalized_rank(scores: list[float]) -> list[float]:
    """Tie-aware normalized ranks: best score -> 1, worst -> 0.

    Tied scores receive the average of their tied rank positions; a single
    method is ranked 1.0 by convention (the formula divides by K - 1).
    """
    k = len(scores)
    if k == 0:
        raise ValueError("scores must be non-empty")
    if k == 1:
        return [1.0]
    order = sorted(range(k), key=lambda i: -scores[i])
    ranks = [0.0] * k
    position = 0
    while position < k:
        tied_end = position
        while tied_end + 1 < k and scores[order[tied_end + 1]] == scores[order[position]]:
            tied_end += 1
        # rank positions are 1-based; tied entries share the average position
        average_rank = (position + 1 + tied_end + 1) / 2.0
        for idx in order[position : tied_end + 1]:
            ranks[idx] = average_rank
        position = tied_end + 1
    return [(k - r) / (k - 1) for r in ranks]


def rank_across_methods(per_method_scores: list[float]) -> list[float]:
    """Alias making the K-methods comparison intent explicit at call sites."""
    return normalized_rank(per_method_scores)


def quality_score(assist_acc: float, train_rank: float, test_rank: float) -> float:
    for name, value in (("assist_acc", assist_acc), ("train_rank", train_rank), ("test_rank", test_rank)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {value}")
    return 0.5 * assist_acc + 0.25 * train_rank + 0.25 * test_rank


def overall_aggregates(assist_value: float, opt_value: float) -> float:
    return 0.5 * assist_value + 0.5 * opt_value


# --- kwargs extraction ---------------------------------------------------------


def extract_kwargs(question: str, solver_code: str, gateway: Gateway) -> tuple[dict, list[str]]:
    """Parse the solve entry's keyword arguments for a question variant.

    Keys are validated against the solver's header block; undeclared keys
    are dropped with a diagnostic, and parameters the question does not
    determine are simply absent.
    """
    declared = parse_header_params(solver_code)
    if declared is None:
        raise KwargsParseError("solver has no machine-readable header block")
    reply = gateway.ask(PromptId.PARAM, {"question": question, "solution_code": solver_code})
    try:
        payload = extract_fenced(reply, kind="code")
    except NoFenceError as exc:
        raise KwargsParseError(f"no fenced reply: {exc}") from exc
    try:
        parsed = ast.literal_eval(payload.strip())
    except (ValueError, SyntaxError) as exc:
        raise KwargsParseError(f"reply is not a literal dict: {exc}") from exc
    if not isinstance(parsed, dict):
        raise KwargsParseError(f"reply is not a dict: {type(parsed).__name__}")
    kwargs: dict = {}
    diagnostics: list[str] = []
    for key, value in parsed.items():
        if key in declared:
            kwargs[key] = value
        else:
            diagnostics.append(f"extracted key `{key}` is not a declared parameter; dropped")
    return kwargs, diagnostics


# --- report building -----------------------------------------------------------

METRIC_NAMES = (
    "pass_at_1_assist",
    "tool_acc_assist",
    "accuracy_assist",
    "pass_at_1_opt",
    "tool_acc_opt",
    "train_score",
    "test_score",
    "train_rank",
    "test_rank",
    "quality_score",
    "pass_at_1_overall",
    "tool_acc_overall",
)


@dataclass
class MetricsReport:
    trials: int
    per_trial: list[dict]
    means: dict[str, float | None]
    stds: dict[str, float | None]
    per_task: list[dict]

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "per_trial": self.per_trial,
            "means": self.means,
            "stds": self.stds,
            "per_task": self.per_task,
        }


def compute_trial_metrics(records: list[TrialRecord]) -> dict[str, float | None]:
    """All suite metrics over one trial's records; None where a side is absent.

    Rank metrics compare across methods; a single-engine run has K = 1, so
    every opt task's rank is 1.0 by the declared convention.
    """
    has_assist = any(r.task_type == ASSIST for r in records)
    has_opt = any(r.task_type == OPT for r in records)
    metrics: dict[str, float | None] = {name: None for name in METRIC_NAMES}
    if has_assist:
        metrics["pass_at_1_assist"] = pass_at_1(records, ASSIST)
        metrics["tool_acc_assist"] = mean_tool_accuracy(records, ASSIST)
        metrics["accuracy_assist"] = assist_accuracy(records)
    if has_opt:
        metrics["pass_at_1_opt"] = pass_at_1(records, OPT)
        metrics["tool_acc_opt"] = mean_tool_accuracy(records, OPT)
        metrics["train_score"] = subset_score(records, "train")
        metrics["test_score"] = subset_score(records, "test")
        opt_records = [r for r in records if r.task_type == OPT]
        train_ranks = [normalized_rank([task_subset_mean(r, "train")])[0] for r in opt_records]
        test_ranks = [normalized_rank([task_subset_mean(r, "test")])[0] for r in opt_records]
        metrics["train_rank"] = sum(train_ranks) / len(train_ranks)
        metrics["test_rank"] = sum(test_ranks) / len(test_ranks)
    if has_assist and has_opt:
        metrics["quality_score"] = quality_score(
            metrics["accuracy_assist"], metrics["train_rank"], metrics["test_rank"]
        )
        metrics["pass_at_1_overall"] = overall_aggregates(
            metrics["pass_at_1_assist"], metrics["pass_at_1_opt"]
        )
        metrics["tool_acc_overall"] = overall_aggregates(
            metrics["tool_acc_assist"], metrics["tool_acc_opt"]
        )
    return metrics


def _population_std(values: list[float]) -> float:
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


def build_report(records: list[TrialRecord], trials: int = 3) -> MetricsReport:
    """Per-trial metrics aggregated as mean ± population standard deviation.

    Every task must appear exactly once in every trial; anything else is an
    InconsistentTrialsError rather than a silently skewed mean.
    """
    if not records:
        raise NoTasksError("no trial records")
    by_trial: dict[int, list[TrialRecord]] = {t: [] for t in range(trials)}
    task_ids = sorted({r.task_id for r in records})
    for record in records:
        if record.trial not in by_trial:
            raise InconsistentTrialsError(
                f"record for task {record.task_id} names trial {record.trial}, expected 0..{trials - 1}"
            )
        by_trial[record.trial].append(record)
    for trial, trial_records in by_trial.items():
        seen = sorted(r.task_id for r in trial_records)
        if seen != task_ids:
            missing = set(task_ids) - set(seen)
            extra = [t for t in seen if seen.count(t) > 1]
            raise InconsistentTrialsError(
                f"trial {trial} inconsistent (missing={sorted(missing)}, duplicated={sorted(set(extra))})"
            )

    per_trial = [compute_trial_metrics(by_trial[t]) for t in range(trials)]
    means: dict[str, float | None] = {}
    stds: dict[str, float | None] = {}
    for name in METRIC_NAMES:
        values = [m[name] for m in per_trial]
        if any(v is None for v in values):
            means[name] = None
            stds[name] = None
        else:
            means[name] = sum(values) / len(values)
            stds[name] = _population_std(values)

    per_task = []
    for task_id in task_ids:
        task_records = sorted(
            (r for r in records if r.task_id == task_id), key=lambda r: r.trial
        )
        # wall times stay out of the report document so scripted runs stay
        # byte-identical; the CSV export carries them instead
        per_task.append(
            {
                "task_id": task_id,
                "task_type": task_records[0].task_type,
                "executed": [r.executed for r in task_records],
                "tool_accuracy": [
                    tool_accuracy(set(r.tools_used), set(r.tools_reference)) for r in task_records
                ],
                "assist_score": [r.assist_score for r in task_records],
                "train_mean": [task_subset_mean(r, "train") for r in task_records],
                "test_mean": [task_subset_mean(r, "test") for r in task_records],
            }
        )
    return MetricsReport(trials=trials, per_trial=per_trial, means=means, stds=stds, per_task=per_task)
