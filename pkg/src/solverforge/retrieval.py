"""Embedding, cosine scoring, and top-k tool retrieval.

Two embedders implement the same one-method contract: a remote
OpenAI-compatible embeddings endpoint for live runs, and a deterministic
feature-hashing bag-of-words embedder so tests and offline runs need no
model server. Indexes are immutable once built and safe to query
concurrently.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import (
    DimensionMismatchError,
    EmbedderUnavailableError,
    EmptyIndexError,
)
from .registry import Registry

DEFAULT_DIM = 768

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Deterministic bag-of-words embedder via feature hashing.

    Each token maps to a bucket and a sign derived from its md5 digest, so
    the same text embeds identically on any machine. Empty text embeds to
    the zero vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            digest = hashlib.md5(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        return vec


class RemoteEmbedder:
    """OpenAI-compatible /embeddings endpoint."""

    def __init__(self, endpoint: str, model: str, api_key: str = "", dim: int = DEFAULT_DIM, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.dim = dim
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                f"{self.endpoint}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise EmbedderUnavailableError(str(exc)) from exc
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EmbedderUnavailableError(
                f"endpoint returned dimension {vec.shape}, expected ({self.dim},)"
            )
        return vec


def embed(text: str, embedder) -> np.ndarray:
    """Embed text to a fixed-dimension finite vector."""
    vec = np.asarray(embedder.embed(text), dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise EmbedderUnavailableError("embedder produced non-finite values")
    return vec


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Standard cosine in [-1, 1]; zero-norm vectors score 0 against anything."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    value = float(np.dot(a, b) / (norm_a * norm_b))
    # guard against accumulated rounding pushing past the bounds
    return max(-1.0, min(1.0, value))


@dataclass
class VectorIndex:
    """Pre-computed embeddings of tool descriptions, plus the query embedder."""

    names: list[str]
    vectors: np.ndarray  # shape (M, D)
    embedder: HashingEmbedder | RemoteEmbedder | None = None

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.names)


def build_index(registry: Registry, embedder, text_mode: str = "description") -> VectorIndex:
    """Embed every registered tool's text.

    text_mode "description" embeds the description field only; "full"
    additionally embeds the rendered I/O spec.
    """
    names = sorted(registry.specs)
    rows = []
    for name in names:
        spec = registry.specs[name]
        if text_mode == "full":
            io_text = " ".join(
                f"{f.name} {f.type} {f.explanation}" for f in (*spec.inputs, *spec.outputs)
            )
            text = f"{spec.name} {spec.description} {io_text}"
        else:
            text = spec.description
        rows.append(embed(text, embedder))
    vectors = np.vstack(rows) if rows else np.zeros((0, getattr(embedder, "dim", DEFAULT_DIM)))
    return VectorIndex(names=names, vectors=vectors, embedder=embedder)


def embedder_tag(embedder) -> str:
    """Identity string recorded in index sidecars so stale indexes are detected."""
    if isinstance(embedder, HashingEmbedder):
        return f"hashing-{embedder.dim}"
    if isinstance(embedder, RemoteEmbedder):
        return f"remote:{embedder.model}-{embedder.dim}"
    return type(embedder).__name__


def save_index(index: VectorIndex, path: str | Path) -> None:
    doc = {
        "dim": index.dim,
        "embedder": embedder_tag(index.embedder) if index.embedder else "",
        "entries": [
            {"name": name, "vector": index.vectors[i].tolist()}
            for i, name in enumerate(index.names)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_index(path: str | Path, embedder=None, require_tag: str | None = None) -> VectorIndex:
    doc = json.loads(Path(path).read_text())
    if require_tag is not None and doc.get("embedder") != require_tag:
        raise EmbedderUnavailableError(
            f"index at {path} was built with embedder {doc.get('embedder')!r}, need {require_tag!r}"
        )
    names = [e["name"] for e in doc["entries"]]
    vectors = (
        np.asarray([e["vector"] for e in doc["entries"]], dtype=np.float64)
        if names
        else np.zeros((0, doc["dim"]))
    )
    return VectorIndex(names=names, vectors=vectors, embedder=embedder)


def top_k_tools(query: str, index: VectorIndex, k: int) -> list[tuple[str, float]]:
    """The min(k, M) highest-cosine tools for the query, best first.

    Equal scores break ties by lexicographic tool name so rankings are
    reproducible across runs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise EmptyIndexError("index has no entries")
    if index.embedder is None:
        raise EmbedderUnavailableError("index has no embedder attached for queries")
    query_vec = embed(query, index.embedder)
    if query_vec.shape != (index.dim,):
        raise DimensionMismatchError(f"query {query_vec.shape} vs index dim {index.dim}")
    scored = [
        (name, cosine_similarity(query_vec, index.vectors[i]))
        for i, name in enumerate(index.names)
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[: min(k, len(scored))]
