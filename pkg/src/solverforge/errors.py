"""Exception hierarchy shared across the engine.

Every failure the engine can surface to a caller is a subclass of
``ForgeError``, so pipeline code can catch one base type at orchestration
boundaries while tests assert on the precise leaf.
"""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all engine errors."""


# --- tool registry -----------------------------------------------------------


class MissingDirError(ForgeError):
    """A required directory does not exist."""


class ManifestParseError(ForgeError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class UnknownToolError(ForgeError):
    def __init__(self, name: str):
        super().__init__(f"unknown tool: {name}")
        self.name = name


# --- llm gateway -------------------------------------------------------------


class TransportError(ForgeError):
    """Network / HTTP-level failure talking to a completion backend."""

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class RateLimitedError(TransportError):
    """Backend rate-limited the request (retryable; raised as-is once retries run out)."""


class BackendExhaustedError(ForgeError):
    """A scripted backend ran out of canned replies."""


class ScriptMismatchError(ForgeError):
    """A scripted reply's matcher did not match the incoming request."""


class MissingSlotError(ForgeError):
    def __init__(self, name: str):
        super().__init__(f"missing prompt slot: {name}")
        self.name = name


class NoFenceError(ForgeError):
    """No fenced block of the requested kind in the model output."""


class FenceParseError(ForgeError):
    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class UnparsableTaskTypeError(ForgeError):
    """Model output could not be mapped to a task type."""


# --- retrieval ---------------------------------------------------------------


class EmbedderUnavailableError(ForgeError):
    pass


class DimensionMismatchError(ForgeError):
    pass


class EmptyIndexError(ForgeError):
    pass


# --- analyzer ----------------------------------------------------------------


class ClassificationFailedError(ForgeError):
    """Task-type classification failed even after the retry."""


class FormalizeParseError(ForgeError):
    def __init__(self, message: str, missing_key: str | None = None):
        super().__init__(message)
        self.missing_key = missing_key


# --- executor ----------------------------------------------------------------


class SandboxSetupError(ForgeError):
    """The run directory could not be prepared (distinct from script failure)."""


class EvaluatorCrashedError(ForgeError):
    def __init__(self, diagnostics: str):
        super().__init__("evaluator crashed")
        self.diagnostics = diagnostics


class ScoreMissingError(ForgeError):
    """Evaluator exited cleanly but produced no usable score manifest."""


# --- solver ------------------------------------------------------------------


class PlanParseError(ForgeError):
    pass


class CodeExtractError(ForgeError):
    pass


class TemplateViolationError(ForgeError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class SolveExhaustedError(ForgeError):
    """All solve cycles failed; carries the best partial outcome seen."""

    def __init__(self, message: str, best_partial=None):
        super().__init__(message)
        self.best_partial = best_partial


# --- evaluator generation ----------------------------------------------------


class VerdictParseError(ForgeError):
    pass


class IntegrityViolationError(ForgeError):
    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"integrity violation ({kind}): {detail}" if detail else f"integrity violation ({kind})")
        self.kind = kind


class VerificationExhaustedError(ForgeError):
    def __init__(self, diagnostics: str):
        super().__init__("solver/evaluator verification exhausted")
        self.diagnostics = diagnostics


# --- evolution ---------------------------------------------------------------


class EmptyPopulationError(ForgeError):
    pass


class OperatorSkippedError(ForgeError):
    def __init__(self, operator: str, reason: str):
        super().__init__(f"{operator} skipped: {reason}")
        self.operator = operator
        self.reason = reason


# --- benchmark ---------------------------------------------------------------


class NoTasksError(ForgeError):
    pass


class KwargsParseError(ForgeError):
    pass


class InconsistentTrialsError(ForgeError):
    pass


# --- packager ----------------------------------------------------------------


class CopyFailureError(ForgeError):
    pass


class DependencyConflictError(ForgeError):
    def __init__(self, conflicts: list[str]):
        super().__init__("; ".join(conflicts))
        self.conflicts = list(conflicts)
