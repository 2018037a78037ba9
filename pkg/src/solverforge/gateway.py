"""Chat-completion access, prompt templating, and model-output parsing.

Two backends satisfy the same one-method contract: an OpenAI-compatible
HTTP backend for live runs and a scripted backend that replays canned
replies for offline, bit-reproducible runs. Prompt bodies live as plain
text files under ``prompts/`` so they can be edited without touching code.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import requests

from .errors import (
    BackendExhaustedError,
    FenceParseError,
    MissingSlotError,
    NoFenceError,
    RateLimitedError,
    ScriptMismatchError,
    TransportError,
    UnparsableTaskTypeError,
)

DEFAULT_PROMPTS_DIR = Path(__file__).parent / "prompts"

ASSIST = "assist"
OPT = "opt"


class PromptId(str, Enum):
    """Identifiers of the shipped prompt templates (= file stems under prompts/)."""

    CLASSIFY = "p_cls"
    FORMALIZE = "p_fm"
    PLAN = "p_plan"
    GENERATE = "p_gen"
    DEBUG = "p_dbg"
    REFEREE = "p_ref"
    PLAN_EVAL = "p_plan_eval"
    GEN_EVAL = "p_gen_eval"
    GEN_EVAL_ASSIST = "p_gen_eval_assist"
    CROSS_E1 = "p_cross_e1"
    CROSS_E2 = "p_cross_e2"
    MUT_M1 = "p_mut_m1"
    MUT_M2 = "p_mut_m2"
    MUT_M3 = "p_mut_m3"
    PARAM = "p_param"


# Deterministic prompts (classification, argument parsing) run cold; everything
# that writes code or varies strategy runs warm. Both are configuration.
DEFAULT_TEMPERATURES = {
    PromptId.CLASSIFY: 0.0,
    PromptId.PARAM: 0.0,
}
DEFAULT_TEMPERATURE = 0.7

_SLOT_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")
_FENCE_RE = re.compile(r"```([^\n`]*)\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 4096
    seed: int | None = None

    def text(self) -> str:
        """All message contents joined, for matchers and transcript scrubbing."""
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required_slots: tuple[str, ...]


def discover_slots(body: str) -> tuple[str, ...]:
    seen: list[str] = []
    for m in _SLOT_RE.finditer(body):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return tuple(seen)


def load_templates(prompts_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load every ``<id>.txt`` under prompts_dir (default: the packaged set)."""
    root = Path(prompts_dir) if prompts_dir else DEFAULT_PROMPTS_DIR
    templates: dict[str, PromptTemplate] = {}
    for path in sorted(root.glob("*.txt")):
        body = path.read_text()
        templates[path.stem] = PromptTemplate(
            id=path.stem, body=body, required_slots=discover_slots(body)
        )
    return templates


def render_prompt(tpl: PromptTemplate, slots: dict[str, str]) -> str:
    """Pure substitution of named slots; extra slots ignored, missing ones fatal."""

    def _sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in slots:
            raise MissingSlotError(name)
        return str(slots[name])

    return _SLOT_RE.sub(_sub, tpl.body)


# --- backends ----------------------------------------------------------------


@dataclass
class ScriptedReply:
    reply: str
    expect: str | None = None  # substring that must occur in the request text


class ScriptedBackend:
    """Replays an ordered list of canned replies; never improvises.

    Exhausting the script or failing an ``expect`` matcher raises instead of
    inventing output, so a drifting call sequence fails loudly.
    """

    def __init__(self, entries: list[ScriptedReply | dict | str]):
        self.entries: list[ScriptedReply] = []
        for e in entries:
            if isinstance(e, ScriptedReply):
                self.entries.append(e)
            elif isinstance(e, dict):
                self.entries.append(ScriptedReply(reply=e["reply"], expect=e.get("expect")))
            else:
                self.entries.append(ScriptedReply(reply=str(e)))
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, list):
            raise ValueError(f"{path}: scripted transcript must be a JSON array")
        return cls(doc)

    @property
    def calls_made(self) -> int:
        return self._cursor

    def complete(self, request: ChatRequest) -> CompletionResult:
        with self._lock:
            if self._cursor >= len(self.entries):
                raise BackendExhaustedError(
                    f"scripted backend exhausted after {len(self.entries)} replies"
                )
            entry = self.entries[self._cursor]
            self._cursor += 1
        if entry.expect is not None and entry.expect not in request.text():
            raise ScriptMismatchError(
                f"reply #{self._cursor} expected {entry.expect!r} in request"
            )
        return CompletionResult(text=entry.reply, usage={"scripted": True})


class HttpBackend:
    """OpenAI-compatible chat-completions over HTTP."""

    def __init__(self, endpoint: str, api_key: str = "", timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, request: ChatRequest) -> CompletionResult:
        payload = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc), retryable=True) from exc
        if resp.status_code == 429:
            raise RateLimitedError("backend rate-limited the request")
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise TransportError(
                f"request rejected ({resp.status_code}): {resp.text[:300]}", retryable=False
            )
        try:
            doc = resp.json()
            text = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"malformed completion response: {exc}", retryable=False)
        return CompletionResult(text=text, usage=doc.get("usage", {}))


def complete(
    request: ChatRequest,
    backend,
    retries: int = 3,
    backoff_base: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> CompletionResult:
    """Run one completion with retry on transient transport failures.

    Retry schedule is backoff_base * 2**attempt (1s/2s/4s at the default);
    non-retryable errors and scripted-backend errors propagate immediately.
    """
    attempt = 0
    while True:
        try:
            return backend.complete(request)
        except TransportError as exc:
            if not exc.retryable or attempt >= retries:
                raise
            sleep(backoff_base * (2**attempt))
            attempt += 1


# --- output parsing ----------------------------------------------------------


def extract_fenced(text: str, kind: str = "code"):
    """Return the payload of the first fenced block matching ``kind``.

    kind="code" matches ```python / ```py / bare ``` fences and returns the
    raw text; kind="json" matches ```json fences and returns the parsed value.
    """
    if kind not in ("code", "json"):
        raise ValueError(f"unknown fence kind: {kind}")
    for m in _FENCE_RE.finditer(text):
        tag = m.group(1).strip().lower()
        body = m.group(2)
        if kind == "code" and tag in ("", "python", "py"):
            return body.strip("\n")
        if kind == "json" and tag == "json":
            try:
                return json.loads(body)
            except json.JSONDecodeError as exc:
                raise FenceParseError(f"bad JSON in fence: {exc.msg}", position=exc.pos)
    raise NoFenceError(f"no {kind} fence found in model output")


_ASSIST_RE = re.compile(r"\b(assist|assistant)\b", re.IGNORECASE)
_OPT_RE = re.compile(r"\b(opt|optimization|optimize|optimisation)\b", re.IGNORECASE)


def parse_task_type(text: str) -> str:
    """Map model output to ``assist`` or ``opt``; tolerant but never guessing.

    A fenced JSON object with a task_type/type field wins; otherwise a
    keyword scan must match exactly one of the two families.
    """
    try:
        doc = extract_fenced(text, kind="json")
        if isinstance(doc, dict):
            value = str(doc.get("task_type", doc.get("type", ""))).lower()
            if _ASSIST_RE.search(value):
                return ASSIST
            if _OPT_RE.search(value):
                return OPT
    except (NoFenceError, FenceParseError):
        pass
    has_assist = bool(_ASSIST_RE.search(text))
    has_opt = bool(_OPT_RE.search(text))
    if has_assist and not has_opt:
        return ASSIST
    if has_opt and not has_assist:
        return OPT
    raise UnparsableTaskTypeError(f"cannot tell task type from: {text[:120]!r}")


# --- convenience wrapper -----------------------------------------------------


class Gateway:
    """Bundles a backend, the prompt templates, and per-prompt temperatures.

    ``ask`` renders a template, issues the completion, and reports the
    prompt/response pair to an optional observer (the run transcript).
    """

    def __init__(
        self,
        backend,
        model: str = "scripted",
        templates: dict[str, PromptTemplate] | None = None,
        temperatures: dict | None = None,
        max_tokens: int = 4096,
        seed: int | None = None,
        retries: int = 3,
        backoff_base: float = 1.0,
        observer: Callable[[str, str, str], None] | None = None,
    ):
        self.backend = backend
        self.model = model
        self.templates = templates if templates is not None else load_templates()
        self.temperatures = dict(DEFAULT_TEMPERATURES)
        if temperatures:
            self.temperatures.update(temperatures)
        self.max_tokens = max_tokens
        self.seed = seed
        self.retries = retries
        self.backoff_base = backoff_base
        self.observer = observer

    def template(self, prompt_id: PromptId | str) -> PromptTemplate:
        key = prompt_id.value if isinstance(prompt_id, PromptId) else prompt_id
        if key not in self.templates:
            raise KeyError(f"no prompt template loaded for {key}")
        return self.templates[key]

    def ask(self, prompt_id: PromptId | str, slots: dict[str, str]) -> str:
        prompt = render_prompt(self.template(prompt_id), slots)
        temperature = self.temperatures.get(prompt_id, DEFAULT_TEMPERATURE)
        request = ChatRequest(
            model=self.model,
            messages=(Message("user", prompt),),
            temperature=temperature,
            max_tokens=self.max_tokens,
            seed=self.seed,
        )
        result = complete(
            request, self.backend, retries=self.retries, backoff_base=self.backoff_base
        )
        if self.observer is not None:
            key = prompt_id.value if isinstance(prompt_id, PromptId) else prompt_id
            self.observer(key, prompt, result.text)
        return result.text
