"""Phase 1 retrieval: BM25 lexical gate, embedding rescore, collision resolution.

Each report sentence is matched against the annotated exemplar corpus.  The
lexical stage is a permissive filter (any shared stem); the semantic stage
keeps classes whose best exemplar cosine clears the threshold.  When two
sentences select the same class, the higher-similarity sentence wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .embedding import EmbeddingBackend, EmbeddingVector, embed, safe_cosine
from .parsing import SentenceUnit, tokenize_and_stem
from .registry import AnnotatedExample, CdeRegistry

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_THRESHOLD = 0.9


@dataclass(frozen=True)
class Candidate:
    class_id: str
    lexical_score: float
    semantic_score: float


@dataclass(frozen=True)
class CandidateSet:
    sentence_index: int
    candidates: tuple[Candidate, ...]
    threshold: float

    def class_ids(self) -> tuple[str, ...]:
        return tuple(c.class_id for c in self.candidates)

    def get(self, class_id: str) -> Candidate | None:
        for candidate in self.candidates:
            if candidate.class_id == class_id:
                return candidate
        return None


@dataclass
class Bm25Index:
    documents: list[AnnotatedExample]
    doc_stems: list[list[str]]
    doc_classes: list[frozenset[str]]
    doc_freq: dict[str, int]
    avg_doc_len: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    _vectors: dict[str, list[EmbeddingVector]] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.documents)

    def class_doc_ids(self, class_id: str) -> list[int]:
        return [i for i, classes in enumerate(self.doc_classes) if class_id in classes]

    def vectors(self, backend: EmbeddingBackend) -> list[EmbeddingVector]:
        """Exemplar embeddings, computed once per backend and memoized."""
        key = backend.backend_id
        if key not in self._vectors:
            self._vectors[key] = embed(backend, [d.sentence for d in self.documents])
        return self._vectors[key]


def build_index(
    exemplars: list[AnnotatedExample],
    registry: CdeRegistry,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> Bm25Index:
    """Index exemplars by stem, remembering which classes each one annotates."""
    if k1 <= 0 or not 0 <= b <= 1:
        raise ValueError(f"invalid BM25 parameters k1={k1}, b={b}")
    doc_stems: list[list[str]] = []
    doc_classes: list[frozenset[str]] = []
    doc_freq: dict[str, int] = {}
    for example in exemplars:
        _, stems = tokenize_and_stem(example.sentence)
        doc_stems.append(stems)
        classes = frozenset(
            registry.class_of_feature(feature).class_id
            for feature in example.feature_values
        )
        doc_classes.append(classes)
        for stem in set(stems):
            doc_freq[stem] = doc_freq.get(stem, 0) + 1
    total = sum(len(stems) for stems in doc_stems)
    avg = total / len(doc_stems) if doc_stems else 0.0
    return Bm25Index(
        documents=list(exemplars),
        doc_stems=doc_stems,
        doc_classes=doc_classes,
        doc_freq=doc_freq,
        avg_doc_len=avg,
        k1=k1,
        b=b,
    )


def bm25_score(index: Bm25Index, query_stems: list[str]) -> list[tuple[int, float]]:
    """Okapi BM25 over the index; zero-scoring documents are omitted.

    The IDF is the non-negative ln(1 + (N - df + 0.5)/(df + 0.5)) form, so
    scores stay >= 0 even for stems present in most documents.
    """
    if not index.documents or not query_stems:
        return []
    n_docs = len(index.documents)
    idf: dict[str, float] = {}
    for stem in set(query_stems):
        df = index.doc_freq.get(stem, 0)
        if df:
            idf[stem] = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
    if not idf:
        return []
    scored: list[tuple[int, float]] = []
    for doc_id, stems in enumerate(index.doc_stems):
        if not stems:
            continue
        length_norm = index.k1 * (
            1.0 - index.b + index.b * len(stems) / index.avg_doc_len
        )
        score = 0.0
        for stem, weight in idf.items():
            tf = stems.count(stem)
            if tf:
                score += weight * tf * (index.k1 + 1.0) / (tf + length_norm)
        if score > 0.0:
            scored.append((doc_id, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def select_candidates(
    sentence: SentenceUnit,
    index: Bm25Index,
    backend: EmbeddingBackend,
    threshold: float = DEFAULT_THRESHOLD,
) -> CandidateSet:
    """Lexical gate (BM25 > 0) then semantic rescore (max exemplar cosine >= threshold)."""
    lexical_by_class: dict[str, float] = {}
    for doc_id, score in bm25_score(index, sentence.stems):
        for class_id in index.doc_classes[doc_id]:
            if score > lexical_by_class.get(class_id, 0.0):
                lexical_by_class[class_id] = score
    if not lexical_by_class:
        return CandidateSet(sentence.index, (), threshold)

    sentence_vector = embed(backend, [sentence.text])[0]
    exemplar_vectors = index.vectors(backend)
    retained: list[Candidate] = []
    for class_id, lexical in lexical_by_class.items():
        semantic = max(
            safe_cosine(sentence_vector, exemplar_vectors[doc_id])
            for doc_id in index.class_doc_ids(class_id)
        )
        if semantic >= threshold:
            retained.append(Candidate(class_id, lexical, semantic))
    retained.sort(key=lambda c: (-c.semantic_score, c.class_id))
    return CandidateSet(sentence.index, tuple(retained), threshold)


def resolve_collisions(per_sentence: list[CandidateSet]) -> dict[str, int]:
    """Assign each candidate class to the sentence with the highest semantic score.

    Ties go to the earlier sentence, matching the first-mention convention.
    """
    best: dict[str, tuple[float, int]] = {}
    for candidate_set in per_sentence:
        for candidate in candidate_set.candidates:
            score, index = candidate.semantic_score, candidate_set.sentence_index
            incumbent = best.get(candidate.class_id)
            if incumbent is None or (score, -index) > (incumbent[0], -incumbent[1]):
                best[candidate.class_id] = (score, index)
    return {class_id: index for class_id, (_, index) in best.items()}
