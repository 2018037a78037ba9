"""Ordered event log for a run, persisted as JSON lines.

Events are reproducibility-sensitive: scripted runs must serialize to
byte-identical files, so events never carry timestamps or wall times, and
registered volatile path prefixes (run/work directories) are scrubbed from
every string field before storage.
"""

from __future__ import annotations

import json
from pathlib import Path


class Transcript:
    def __init__(self):
        self.events: list[dict] = []
        self._scrubs: list[tuple[str, str]] = []

    def register_scrub(self, real: str, token: str) -> None:
        """Replace every occurrence of ``real`` with ``token`` in stored events."""
        real = str(real)
        if real and real != token:
            self._scrubs.append((real, token))
            # longest prefixes first so nested dirs scrub before their parents
            self._scrubs.sort(key=lambda pair: -len(pair[0]))

    def _scrub(self, value):
        if isinstance(value, str):
            for real, token in self._scrubs:
                value = value.replace(real, token)
            return value
        if isinstance(value, dict):
            return {k: self._scrub(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._scrub(v) for v in value]
        return value

    def record(self, kind: str, **payload) -> None:
        event = {"kind": kind}
        event.update(payload)
        self.events.append(self._scrub(event))

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl())


def load_transcript(path: str | Path) -> list[dict]:
    events = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            events.append(json.loads(line))
    return events
