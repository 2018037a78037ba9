"""Tool registry: load, validate, and resolve standardized tool manifests.

Each tool lives in its own directory as ``<tools_dir>/<name>/tool.json``
next to the executable entry point named by the manifest's ``entry`` field.
The manifest carries a uniform description schema (name, free-text
description, typed input/output fields, usage examples, dependency strings,
source link, build command, metadata) so generated code and prompts can
treat every tool identically.

Registries are immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestParseError, MissingDirError, UnknownToolError

MANIFEST_NAME = "tool.json"

_KNOWN_FIELDS = {
    "name",
    "description",
    "inputs",
    "outputs",
    "usage_examples",
    "dependencies",
    "source_link",
    "build_command",
    "entry",
    "metadata",
}


@dataclass(frozen=True)
class IOField:
    """One input or output of a tool: name plus a "type - explanation" pair."""

    name: str
    type: str
    explanation: str


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str = ""
    inputs: tuple[IOField, ...] = ()
    outputs: tuple[IOField, ...] = ()
    usage_examples: tuple[str, ...] = ()
    dependencies: tuple[str, ...] = ()
    source_link: str = ""
    build_command: str = ""
    entry: str = "run.py"
    metadata: dict = field(default_factory=dict)
    # unknown manifest fields, preserved verbatim for forward compatibility
    extra: dict = field(default_factory=dict)

    def to_manifest(self) -> dict:
        doc = {
            "name": self.name,
            "description": self.description,
            "inputs": [vars(f).copy() for f in self.inputs],
            "outputs": [vars(f).copy() for f in self.outputs],
            "usage_examples": list(self.usage_examples),
            "dependencies": list(self.dependencies),
            "source_link": self.source_link,
            "build_command": self.build_command,
            "entry": self.entry,
            "metadata": dict(self.metadata),
        }
        doc.update(self.extra)
        return doc


@dataclass(frozen=True)
class ToolHandle:
    """A resolvable tool: its spec plus the on-disk location of its entry point."""

    spec: ToolSpec
    root_dir: Path
    entry: str

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def entry_path(self) -> Path:
        return self.root_dir / self.entry


@dataclass
class ToolSet:
    """Name-keyed, insertion-ordered collection of tool handles."""

    handles: dict[str, ToolHandle] = field(default_factory=dict)
    kind: str = "solve"  # "solve" or "eval"

    def __len__(self) -> int:
        return len(self.handles)

    def __iter__(self):
        return iter(self.handles.values())

    def __contains__(self, name: str) -> bool:
        return name in self.handles

    def names(self) -> list[str]:
        return list(self.handles.keys())

    def add(self, handle: ToolHandle) -> None:
        if handle.name in self.handles:
            raise ValueError(f"duplicate tool in set: {handle.name}")
        self.handles[handle.name] = handle


@dataclass
class Registry:
    """All tool specs loaded from a tools directory, keyed by name."""

    specs: dict[str, ToolSpec] = field(default_factory=dict)
    roots: dict[str, Path] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.specs)

    def __contains__(self, name: str) -> bool:
        return name in self.specs

    def names(self) -> list[str]:
        return sorted(self.specs)

    def handle(self, name: str) -> ToolHandle:
        if name not in self.specs:
            raise UnknownToolError(name)
        spec = self.specs[name]
        return ToolHandle(spec=spec, root_dir=self.roots[name], entry=spec.entry)

    def tagged(self, tag: str) -> list[str]:
        """Names of tools carrying ``tag`` in their metadata tags list."""
        out = []
        for name in sorted(self.specs):
            tags = self.specs[name].metadata.get("tags", [])
            if isinstance(tags, list) and tag in tags:
                out.append(name)
        return out


def _coerce_io_field(raw, index: int) -> IOField:
    """Accept object, list, or string forms for an I/O entry.

    Strings may be "name: type - explanation" or just "type - explanation";
    anything that names fewer parts produces a field with empty parts that
    validate_spec will flag.
    """
    if isinstance(raw, dict):
        return IOField(
            name=str(raw.get("name", "")),
            type=str(raw.get("type", "")),
            explanation=str(raw.get("explanation", "")),
        )
    if isinstance(raw, (list, tuple)):
        parts = [str(p) for p in raw] + ["", "", ""]
        return IOField(name=parts[0], type=parts[1], explanation=parts[2])
    text = str(raw)
    name = f"arg{index}"
    if ":" in text.split(" - ")[0]:
        name, text = text.split(":", 1)
        name = name.strip()
    if " - " in text:
        type_part, expl = text.split(" - ", 1)
        return IOField(name=name, type=type_part.strip(), explanation=expl.strip())
    return IOField(name=name, type=text.strip(), explanation="")


def parse_manifest(doc: dict, path: str = "<memory>") -> ToolSpec:
    """Build a ToolSpec from a decoded manifest document.

    Raises ManifestParseError for structurally unusable documents (no name,
    not a JSON object). Field-level problems are left for validate_spec.
    """
    if not isinstance(doc, dict):
        raise ManifestParseError(path, "manifest is not a JSON object")
    if not doc.get("name"):
        raise ManifestParseError(path, "missing required field `name`")
    extra = {k: v for k, v in doc.items() if k not in _KNOWN_FIELDS}
    return ToolSpec(
        name=str(doc["name"]),
        description=str(doc.get("description", "")),
        inputs=tuple(_coerce_io_field(r, i) for i, r in enumerate(doc.get("inputs", []))),
        outputs=tuple(_coerce_io_field(r, i) for i, r in enumerate(doc.get("outputs", []))),
        usage_examples=tuple(str(x) for x in doc.get("usage_examples", [])),
        dependencies=tuple(str(x) for x in doc.get("dependencies", [])),
        source_link=str(doc.get("source_link", "")),
        build_command=str(doc.get("build_command", "")),
        entry=str(doc.get("entry", "run.py")),
        metadata=dict(doc.get("metadata", {})),
        extra=extra,
    )


def load_registry(tools_dir: str | Path) -> Registry:
    """Load every ``<dir>/<name>/tool.json`` manifest under tools_dir.

    Malformed manifests never abort the load: each is recorded in
    ``registry.diagnostics`` (naming the offending file) and skipped.
    """
    root = Path(tools_dir)
    if not root.is_dir():
        raise MissingDirError(str(root))
    registry = Registry()
    for manifest_path in sorted(root.glob(f"*/{MANIFEST_NAME}")):
        try:
            doc = json.loads(manifest_path.read_text())
            spec = parse_manifest(doc, str(manifest_path))
        except ManifestParseError as exc:
            registry.diagnostics.append(str(exc))
            continue
        except (json.JSONDecodeError, OSError) as exc:
            registry.diagnostics.append(f"{manifest_path}: {exc}")
            continue
        if spec.name in registry.specs:
            registry.diagnostics.append(f"{manifest_path}: duplicate tool name `{spec.name}`")
            continue
        registry.specs[spec.name] = spec
        registry.roots[spec.name] = manifest_path.parent
    return registry


def save_registry(registry: Registry, tools_dir: str | Path) -> None:
    """Write each spec back out as ``<dir>/<name>/tool.json`` (round-trip of load)."""
    root = Path(tools_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name, spec in registry.specs.items():
        tool_dir = root / name
        tool_dir.mkdir(parents=True, exist_ok=True)
        (tool_dir / MANIFEST_NAME).write_text(json.dumps(spec.to_manifest(), indent=2, sort_keys=True))


def validate_spec(spec: ToolSpec) -> list[str]:
    """Return human-readable violations of the manifest schema; empty means valid."""
    violations: list[str] = []
    if not spec.name.strip():
        violations.append("name empty")
    if not spec.build_command.strip():
        violations.append("build_command empty")
    for side, fields in (("input", spec.inputs), ("output", spec.outputs)):
        for f in fields:
            if not f.name.strip():
                violations.append(f"{side} entry has empty name")
            if not f.type.strip() or not f.explanation.strip():
                violations.append(
                    f"{side} `{f.name or f.type}` does not follow the two-part "
                    f"\"type - explanation\" shape"
                )
    if not spec.entry.strip():
        violations.append("entry empty")
    return violations


def resolve_tools(
    names: list[str],
    registry: Registry,
    kind: str = "solve",
    strict: bool = False,
) -> tuple[ToolSet, list[str]]:
    """Resolve names to handles; returns (tool set, unresolved names).

    In strict mode the first unresolvable name raises UnknownToolError; the
    handle's root directory must exist and contain the entry point.
    """
    toolset = ToolSet(kind=kind)
    unresolved: list[str] = []
    for name in names:
        if name in toolset:
            continue
        if name not in registry:
            if strict:
                raise UnknownToolError(name)
            unresolved.append(name)
            continue
        handle = registry.handle(name)
        if not handle.entry_path.is_file():
            if strict:
                raise UnknownToolError(name)
            unresolved.append(name)
            continue
        toolset.add(handle)
    return toolset, unresolved


def _render_tool_block(spec: ToolSpec) -> str:
    lines = [f"### Tool: {spec.name}", spec.description.strip() or "(no description)"]
    if spec.inputs:
        lines.append("Inputs:")
        lines.extend(f"  - {f.name}: {f.type} - {f.explanation}" for f in spec.inputs)
    if spec.outputs:
        lines.append("Outputs:")
        lines.extend(f"  - {f.name}: {f.type} - {f.explanation}" for f in spec.outputs)
    if spec.usage_examples:
        lines.append("Example:")
        lines.append("  " + spec.usage_examples[0].strip().replace("\n", "\n  "))
    return "\n".join(lines)


def describe_for_prompt(tools: ToolSet, budget: int = 20000) -> str:
    """Deterministic prompt-ready rendering of a tool set.

    Tools are rendered in set order and included whole; once the budget
    would be exceeded the tool (and all later ones) are dropped, so the
    output for a larger budget is always a superset of tools.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    blocks: list[str] = []
    used = 0
    for handle in tools:
        block = _render_tool_block(handle.spec)
        cost = len(block) + (2 if blocks else 0)  # joiner between blocks
        if used + cost > budget:
            break
        blocks.append(block)
        used += cost
    return "\n\n".join(blocks)
