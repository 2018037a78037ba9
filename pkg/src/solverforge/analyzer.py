"""Query analysis: classification, formalization, and retrieval attachment.

Turns a raw natural-language query into a structured problem: its task
type, a recomposed task description, the optimization goal, the reference
answer (held privately for validation, never shown to code-writing
prompts), and the retrieved candidate tool set.
"""

from __future__ import annotations

import re
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    ClassificationFailedError,
    FenceParseError,
    FormalizeParseError,
    NoFenceError,
    UnparsableTaskTypeError,
)
from .gateway import ASSIST, OPT, Gateway, PromptId, extract_fenced, parse_task_type
from .registry import Registry, ToolSet, resolve_tools
from .retrieval import VectorIndex, top_k_tools

TASK_LABELS = ("Inputs:", "Output Format:", "Instructions:")

_ELEMENT_KEYS = ("inputs", "output_format", "instructions", "goal", "reference_answer")


@dataclass(frozen=True)
class OptElements:
    """The five structured elements parsed out of an optimization query."""

    inputs: str
    output_format: str
    instructions: str
    goal: str
    reference_answer: object  # value, or a file path named in the query


@dataclass
class ProblemSpec:
    task_type: str  # assist | opt
    task: str
    goal: str
    reference_answer: object
    tools: ToolSet = field(default_factory=ToolSet)
    query: str = ""
    retrieval: list[tuple[str, float]] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def is_opt(self) -> bool:
        return self.task_type == OPT


def classify(query: str, gateway: Gateway) -> str:
    """Classify the query as assist or opt, re-asking once on unparsable output."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    last = None
    for _ in range(2):
        reply = gateway.ask(PromptId.CLASSIFY, {"question": query})
        try:
            return parse_task_type(reply)
        except UnparsableTaskTypeError as exc:
            last = exc
    raise ClassificationFailedError(str(last))


def formalize(query: str, gateway: Gateway) -> OptElements:
    """Parse an optimization query into its five structured elements."""
    reply = gateway.ask(PromptId.FORMALIZE, {"question": query})
    try:
        doc = extract_fenced(reply, kind="json")
    except (NoFenceError, FenceParseError) as exc:
        raise FormalizeParseError(f"formalization reply unusable: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormalizeParseError("formalization reply is not a JSON object")
    for key in _ELEMENT_KEYS:
        if key not in doc:
            raise FormalizeParseError(f"formalization reply missing key `{key}`", missing_key=key)
    return OptElements(
        inputs=str(doc["inputs"]),
        output_format=str(doc["output_format"]),
        instructions=str(doc["instructions"]),
        goal=str(doc["goal"]),
        reference_answer=doc["reference_answer"],
    )


def compose_spec(elements: OptElements) -> tuple[str, str, object]:
    """Recompose the elements into (task, goal, reference answer).

    The task string uses the fixed literal labels so the three parts can be
    recovered mechanically (see split_task).
    """
    task = (
        f"{TASK_LABELS[0]} {elements.inputs} "
        f"{TASK_LABELS[1]} {elements.output_format} "
        f"{TASK_LABELS[2]} {elements.instructions}"
    )
    return task, elements.goal, elements.reference_answer


_SPLIT_RE = re.compile(
    r"^Inputs: (?P<inputs>.*) Output Format: (?P<output_format>.*) Instructions: (?P<instructions>.*)$",
    re.DOTALL,
)


def split_task(task: str) -> tuple[str, str, str]:
    """Inverse of compose_spec's task assembly."""
    m = _SPLIT_RE.match(task)
    if not m:
        raise ValueError("task does not follow the recomposition labels")
    return m.group("inputs"), m.group("output_format"), m.group("instructions")


def select_eval_tools(registry: Registry, tools_solve: ToolSet, tags: tuple[str, ...] = ("eval",)) -> ToolSet:
    """Evaluation tool set: registry tools carrying an eval tag, plus the solve set."""
    names: list[str] = []
    for tag in tags:
        for name in registry.tagged(tag):
            if name not in names:
                names.append(name)
    for name in tools_solve.names():
        if name not in names:
            names.append(name)
    toolset, _ = resolve_tools(names, registry, kind="eval")
    return toolset


def analyze(
    query: str,
    registry: Registry,
    index: VectorIndex,
    gateway: Gateway,
    k: int = 15,
    forced_type: str | None = None,
) -> ProblemSpec:
    """Full analysis of a query: type, recomposed spec, retrieved tools.

    The reference answer is carried on the returned spec for evaluator-side
    use only; solver-facing prompts are built exclusively from the task text
    and tool descriptions.
    """
    tau = forced_type or classify(query, gateway)
    if tau not in (ASSIST, OPT):
        raise ValueError(f"unknown task type: {tau}")
    ranked = top_k_tools(query, index, k)
    tools, unresolved = resolve_tools([name for name, _ in ranked], registry)
    diagnostics = [f"retrieved tool not resolvable: {n}" for n in unresolved]
    if tau == ASSIST:
        return ProblemSpec(
            task_type=ASSIST,
            task=query,
            goal="",
            reference_answer="",
            tools=tools,
            query=query,
            retrieval=ranked,
            diagnostics=diagnostics,
        )
    elements = formalize(query, gateway)
    task, goal, reference = compose_spec(elements)
    return ProblemSpec(
        task_type=OPT,
        task=task,
        goal=goal,
        reference_answer=reference,
        tools=tools,
        query=query,
        retrieval=ranked,
        diagnostics=diagnostics,
    )


def stash_reference(spec: ProblemSpec, run_dir: str | Path) -> ProblemSpec:
    """Copy a file-path reference answer into a run-private directory.

    Solver runs execute in their own working directories and never receive
    the private path, so they cannot overwrite the data the evaluator will
    score against. Inline (non-path) payloads are left as-is.
    """
    ref = spec.reference_answer
    if not isinstance(ref, str) or not ref:
        return spec
    src = Path(ref)
    if not src.is_file():
        return spec
    private = Path(run_dir) / "reference"
    private.mkdir(parents=True, exist_ok=True)
    dest = private / src.name
    shutil.copy2(src, dest)
    return replace(spec, reference_answer=str(dest))
