"""Sentence embeddings behind a single backend contract.

Two backends are provided: a deterministic built-in backend (TF-IDF over
character n-grams of the stemmed sentence, fitted on the exemplar corpus) and
a remote JSON-over-HTTP backend with a persistent on-disk cache.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

from sklearn.feature_extraction.text import TfidfVectorizer

from .errors import (
    BackendMismatchError,
    BackendProtocolError,
    BackendTransportError,
    EmbeddingError,
    ZeroVectorError,
)
from .parsing import tokenize_and_stem

ENDPOINT_ENV = "EMBED_ENDPOINT"
API_KEY_ENV = "EMBED_API_KEY"


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int
    backend_id: str

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise BackendProtocolError(
                f"vector length {len(self.values)} != declared dim {self.dim}"
            )

    @property
    def norm(self) -> float:
        cached = self.__dict__.get("_norm")
        if cached is None:
            cached = math.sqrt(sum(v * v for v in self.values))
            object.__setattr__(self, "_norm", cached)
        return cached

    @property
    def nonzeros(self) -> dict[int, float]:
        """Sparse index->value view; embedding vectors are mostly zeros."""
        cached = self.__dict__.get("_nonzeros")
        if cached is None:
            cached = {i: v for i, v in enumerate(self.values) if v != 0.0}
            object.__setattr__(self, "_nonzeros", cached)
        return cached


class EmbeddingBackend(Protocol):
    backend_id: str
    dim: int

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


def embed(backend: EmbeddingBackend, texts: Sequence[str]) -> list[EmbeddingVector]:
    """Order-preserving batch embedding; rejects empty/blank inputs."""
    for text in texts:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
    return backend.embed(texts)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.backend_id != b.backend_id:
        raise BackendMismatchError(
            f"cannot compare vectors from {a.backend_id!r} and {b.backend_id!r}"
        )
    na, nb = a.norm, b.norm
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine undefined for a zero vector")
    small, large = (a.nonzeros, b.nonzeros)
    if len(small) > len(large):
        small, large = large, small
    dot = sum(value * large.get(index, 0.0) for index, value in small.items())
    return max(-1.0, min(1.0, dot / (na * nb)))


def safe_cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine that treats zero vectors as similarity 0.0 (out-of-vocabulary text)."""
    try:
        return cosine(a, b)
    except ZeroVectorError:
        return 0.0


def canonical_text(text: str) -> str:
    """Stemmed, space-padded form shared by the built-in backend and its corpus digest."""
    _, stems = tokenize_and_stem(text)
    return " " + " ".join(stems) + " "


class TfidfBackend:
    """Deterministic character-n-gram TF-IDF embeddings fitted on an exemplar corpus.

    Identical sentence text always maps to an identical vector, and two texts
    with identical stem sequences are exactly cosine-1.0, which the retrieval
    threshold logic relies on.
    """

    def __init__(self, corpus_texts: Sequence[str]):
        if not corpus_texts:
            raise EmbeddingError("built-in backend needs a non-empty fitting corpus")
        canon = [canonical_text(t) for t in corpus_texts]
        digest = hashlib.sha256("\n".join(sorted(canon)).encode("utf-8")).hexdigest()
        self.backend_id = f"tfidf-char35-{digest[:12]}"
        self._vectorizer = TfidfVectorizer(
            analyzer="char", ngram_range=(3, 5), lowercase=False, norm="l2"
        )
        self._vectorizer.fit(canon)
        self.dim = len(self._vectorizer.vocabulary_)
        self._memo: dict[str, EmbeddingVector] = {}

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        fresh = [t for t in texts if t not in self._memo]
        if fresh:
            matrix = self._vectorizer.transform([canonical_text(t) for t in fresh])
            for text, row in zip(fresh, matrix.toarray()):
                self._memo[text] = EmbeddingVector(
                    tuple(float(v) for v in row), self.dim, self.backend_id
                )
        return [self._memo[t] for t in texts]


class EmbeddingCache:
    """Content-addressed on-disk vector store; writes are atomic, eviction is manual."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, backend_id: str, text: str) -> Path:
        key = hashlib.sha256(f"{backend_id}\0{text}".encode("utf-8")).hexdigest()
        return self.directory / f"{key}.json"

    def get(self, backend_id: str, text: str) -> EmbeddingVector | None:
        path = self._path(backend_id, text)
        if not path.exists():
            return None
        payload = json.loads(path.read_text("utf-8"))
        return EmbeddingVector(tuple(payload["values"]), payload["dim"], backend_id)

    def put(self, backend_id: str, text: str, vector: EmbeddingVector) -> None:
        path = self._path(backend_id, text)
        payload = {"values": list(vector.values), "dim": vector.dim}
        handle = tempfile.NamedTemporaryFile(
            "w", dir=self.directory, suffix=".tmp", delete=False, encoding="utf-8"
        )
        try:
            json.dump(payload, handle)
            handle.close()
            os.replace(handle.name, path)
        finally:
            if os.path.exists(handle.name):
                os.unlink(handle.name)


def _default_post(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import requests

    response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


class RemoteBackend:
    """JSON-over-HTTP embedding client: POST {"texts": [...]} -> {"vectors", "dim"}."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        cache: EmbeddingCache | None = None,
        post: Callable[[str, dict, dict, float], dict] = _default_post,
        max_retries: int = 2,
        timeout: float = 30.0,
        max_in_flight: int = 4,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not self.endpoint:
            raise EmbeddingError(f"no endpoint configured (flag or {ENDPOINT_ENV})")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        digest = hashlib.sha256(self.endpoint.encode("utf-8")).hexdigest()
        self.backend_id = f"remote-{digest[:12]}"
        self.cache = cache
        self._post = post
        self.max_retries = max_retries
        self.timeout = timeout
        self._gate = threading.Semaphore(max_in_flight)
        self.dim = 0  # learned from the first response

    def _request(self, texts: list[str]) -> list[EmbeddingVector]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._gate:
                    payload = self._post(
                        self.endpoint, {"texts": texts}, headers, self.timeout
                    )
                break
            except Exception as exc:  # noqa: BLE001 - transport errors vary by client
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(0.1 * 2**attempt)
        else:
            raise BackendTransportError(
                f"embedding request failed after {self.max_retries + 1} attempts: {last_error}"
            )
        try:
            vectors, dim = payload["vectors"], int(payload["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendProtocolError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendProtocolError(
                f"asked for {len(texts)} vectors, got {len(vectors)}"
            )
        if self.dim == 0:
            self.dim = dim
        elif dim != self.dim:
            raise BackendProtocolError(f"dim changed from {self.dim} to {dim}")
        out = []
        for row in vectors:
            if len(row) != dim:
                raise BackendProtocolError(
                    f"vector length {len(row)} != declared dim {dim}"
                )
            out.append(EmbeddingVector(tuple(float(v) for v in row), dim, self.backend_id))
        return out

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        results: dict[int, EmbeddingVector] = {}
        misses: list[tuple[int, str]] = []
        for i, text in enumerate(texts):
            cached = self.cache.get(self.backend_id, text) if self.cache else None
            if cached is not None:
                if self.dim == 0:
                    self.dim = cached.dim
                results[i] = cached
            else:
                misses.append((i, text))
        if misses:
            fetched = self._request([t for _, t in misses])
            for (i, text), vector in zip(misses, fetched):
                results[i] = vector
                if self.cache:
                    self.cache.put(self.backend_id, text, vector)
        return [results[i] for i in range(len(texts))]
