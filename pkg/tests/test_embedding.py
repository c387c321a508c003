"""Vector math, the built-in character-gram backend, cache, and remote client."""

from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radcde.embedding import (
    EmbeddingCache,
    EmbeddingVector,
    RemoteBackend,
    TfidfBackend,
    canonical_text,
    cosine,
    embed,
    safe_cosine,
)
from radcde.errors import (
    BackendMismatchError,
    BackendProtocolError,
    BackendTransportError,
    EmbeddingError,
    ZeroVectorError,
)


def vec(values, backend_id="test"):
    return EmbeddingVector(tuple(float(v) for v in values), len(values), backend_id)


class TestCosine:
    def test_hand_computed_value(self):
        # (1,2,3) . (4,5,6) = 32; norms sqrt(14) and sqrt(77).
        expected = 32.0 / (math.sqrt(14.0) * math.sqrt(77.0))
        assert cosine(vec([1, 2, 3]), vec([4, 5, 6])) == pytest.approx(expected, abs=1e-12)

    def test_identical_vectors(self):
        v = vec([0.3, 0.0, 0.4])
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_opposite_vectors(self):
        assert cosine(vec([1, 0]), vec([-1, 0])) == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_vectors(self):
        assert cosine(vec([1, 0]), vec([0, 1])) == 0.0

    def test_backend_mismatch(self):
        with pytest.raises(BackendMismatchError):
            cosine(vec([1, 0], "a"), vec([1, 0], "b"))

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine(vec([0, 0]), vec([1, 0]))
        assert safe_cosine(vec([0, 0]), vec([1, 0])) == 0.0

    def test_dim_mismatch_rejected_at_construction(self):
        with pytest.raises(BackendProtocolError):
            EmbeddingVector((1.0, 2.0), 3, "test")

    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=8),
        st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    )
    def test_symmetry_and_range(self, a, b):
        size = max(len(a), len(b))
        a = a + [0.0] * (size - len(a))
        b = b + [0.0] * (size - len(b))
        va, vb = vec(a), vec(b)
        if va.norm == 0.0 or vb.norm == 0.0:
            assert safe_cosine(va, vb) == 0.0
            return
        forward, backward = cosine(va, vb), cosine(vb, va)
        assert forward == pytest.approx(backward, abs=1e-12)
        assert -1.0 <= forward <= 1.0


class TestCanonicalText:
    def test_stemmed_and_padded(self):
        assert canonical_text("Pleural effusions!") == " pleural effus "

    def test_case_and_inflection_collapse(self):
        assert canonical_text("There is a Nodule.") == canonical_text("there is a nodule")


class TestTfidfBackend:
    def test_requires_fitting_corpus(self):
        with pytest.raises(EmbeddingError):
            TfidfBackend([])

    def test_backend_id_depends_only_on_canonical_corpus(self):
        first = TfidfBackend(["Pleural effusion.", "Clear lungs."])
        second = TfidfBackend(["Clear lungs!", "pleural effusions"])  # same stems
        third = TfidfBackend(["Clear lungs.", "Cardiomegaly."])
        assert first.backend_id == second.backend_id
        assert first.backend_id != third.backend_id
        assert first.backend_id.startswith("tfidf-char35-")

    def test_embed_is_deterministic_and_memoized(self, backend):
        text = "There is a small pleural effusion."
        first = embed(backend, [text])[0]
        second = embed(backend, [text])[0]
        assert first is second  # memo returns the identical vector object
        assert first.backend_id == backend.backend_id
        assert first.dim == backend.dim

    def test_identical_stem_sequences_embed_identically(self, backend):
        a = embed(backend, ["There is a pleural effusion."])[0]
        b = embed(backend, ["there is a Pleural Effusions"])[0]
        assert cosine(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_different_sentences_are_not_identical(self, backend):
        a = embed(backend, ["There is a pleural effusion."])[0]
        b = embed(backend, ["The heart is enlarged."])[0]
        assert cosine(a, b) < 0.9

    def test_related_beats_unrelated(self, backend):
        probe = embed(backend, ["Small left pleural effusion is seen."])[0]
        related = embed(backend, ["There is a small pleural effusion."])[0]
        unrelated = embed(backend, ["The bowel gas pattern is unremarkable."])[0]
        assert safe_cosine(probe, related) > safe_cosine(probe, unrelated)

    def test_empty_text_rejected(self, backend):
        with pytest.raises(EmbeddingError):
            embed(backend, ["  "])

    def test_order_preserved(self, backend):
        texts = ["Clear lungs.", "Cardiomegaly is present.", "Clear lungs."]
        vectors = embed(backend, texts)
        assert len(vectors) == 3
        assert vectors[0].values == vectors[2].values


class TestEmbeddingCache:
    def test_round_trip(self, tmp_path):
        cache = EmbeddingCache(tmp_path / "cache")
        vector = vec([0.1, 0.0, 0.25], "remote-abc")
        assert cache.get("remote-abc", "hello") is None
        cache.put("remote-abc", "hello", vector)
        loaded = cache.get("remote-abc", "hello")
        assert loaded == vector
        assert cache.get("remote-xyz", "hello") is None  # keyed by backend too


class FakePost:
    """Scripted transport: yields one scripted outcome per call, records calls."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def __call__(self, url, payload, headers, timeout):
        self.calls.append((url, payload, headers))
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        if callable(outcome):
            return outcome(payload)
        return outcome


def echo_response(payload):
    texts = payload["texts"]
    return {"vectors": [[float(len(t)), 1.0] for t in texts], "dim": 2}


class TestRemoteBackend:
    def test_requires_endpoint(self, monkeypatch):
        monkeypatch.delenv("EMBED_ENDPOINT", raising=False)
        with pytest.raises(EmbeddingError):
            RemoteBackend(post=FakePost([]))

    def test_embeds_and_sends_auth_header(self):
        post = FakePost([echo_response])
        backend = RemoteBackend(endpoint="http://x/embed", api_key="sekrit", post=post)
        vectors = backend.embed(["ab", "cdef"])
        assert [v.values for v in vectors] == [(2.0, 1.0), (4.0, 1.0)]
        assert backend.dim == 2
        _, payload, headers = post.calls[0]
        assert payload == {"texts": ["ab", "cdef"]}
        assert headers["Authorization"] == "Bearer sekrit"

    def test_retries_then_succeeds(self):
        post = FakePost([ConnectionError("boom"), echo_response])
        backend = RemoteBackend(endpoint="http://x", post=post, max_retries=1)
        assert backend.embed(["abc"])[0].values == (3.0, 1.0)
        assert len(post.calls) == 2

    def test_retries_exhausted(self):
        post = FakePost([ConnectionError("a"), ConnectionError("b")])
        backend = RemoteBackend(endpoint="http://x", post=post, max_retries=1)
        with pytest.raises(BackendTransportError, match="2 attempts"):
            backend.embed(["abc"])

    def test_malformed_payload(self):
        backend = RemoteBackend(
            endpoint="http://x", post=FakePost([{"rows": []}]), max_retries=0
        )
        with pytest.raises(BackendProtocolError, match="malformed"):
            backend.embed(["abc"])

    def test_wrong_vector_count(self):
        backend = RemoteBackend(
            endpoint="http://x",
            post=FakePost([{"vectors": [[1.0]], "dim": 1}]),
            max_retries=0,
        )
        with pytest.raises(BackendProtocolError, match="asked for 2"):
            backend.embed(["a", "b"])

    def test_dim_change_between_calls(self):
        post = FakePost(
            [{"vectors": [[1.0, 0.0]], "dim": 2}, {"vectors": [[1.0]], "dim": 1}]
        )
        backend = RemoteBackend(endpoint="http://x", post=post, max_retries=0)
        backend.embed(["a"])
        with pytest.raises(BackendProtocolError, match="dim changed"):
            backend.embed(["b"])

    def test_row_length_mismatch(self):
        backend = RemoteBackend(
            endpoint="http://x",
            post=FakePost([{"vectors": [[1.0, 2.0, 3.0]], "dim": 2}]),
            max_retries=0,
        )
        with pytest.raises(BackendProtocolError, match="length"):
            backend.embed(["a"])

    def test_cache_short_circuits_transport(self, tmp_path):
        post = FakePost([echo_response])
        cache = EmbeddingCache(tmp_path / "cache")
        backend = RemoteBackend(endpoint="http://x", cache=cache, post=post)
        first = backend.embed(["abc", "de"])
        second = backend.embed(["abc", "de"])  # served from cache
        assert [v.values for v in first] == [v.values for v in second]
        assert len(post.calls) == 1

    def test_backend_id_derived_from_endpoint(self):
        a = RemoteBackend(endpoint="http://x", post=FakePost([]))
        b = RemoteBackend(endpoint="http://x", post=FakePost([]))
        c = RemoteBackend(endpoint="http://y", post=FakePost([]))
        assert a.backend_id == b.backend_id != c.backend_id
        assert a.backend_id.startswith("remote-")
