"""End-to-end report extractor: parse, retrieve classes, map values, standardize.

The Extractor owns the shared state (registry, augmented exemplar corpus,
embedding backend, BM25 index) so repeated reports reuse one setup.  Each
report flows through:

1. parse + entity tagging,
2. per-sentence candidate classes (BM25 gate + exemplar cosine >= threshold),
3. collision resolution (one sentence per class),
4. value mapping per winning (class, sentence) pair,
5. standardization to one CDE assignment per registry entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .augmentation import augmented_corpus
from .embedding import EmbeddingBackend, TfidfBackend
from .errors import UnitConversionError
from .parsing import (
    EntityLexicons,
    ParsedReport,
    load_lexicons,
    parse_report,
    tag_entities,
)
from .porter import stem
from .registry import (
    UNSPECIFIED,
    CdeKind,
    CdeRegistry,
    default_extractions,
    load_registry,
)
from .retrieval import CandidateSet, build_index, resolve_collisions, select_candidates
from .value_mapper import (
    CdeAssignment,
    FeatureExtraction,
    best_exemplar,
    convert_unit,
    extract_numeric,
    is_disjunctive,
    map_categorical,
    negated_core_term,
    standardize,
    validate_bounds,
)


@dataclass(frozen=True)
class ExtractorConfig:
    similarity_threshold: float = 0.9
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    categorical_floor: float = 0.5
    negation_override: bool = True
    bilateral_inference: bool = True
    disjunction_rule: bool = True


@dataclass
class ExtractionResult:
    report_id: str
    parsed: ParsedReport
    candidates: tuple[CandidateSet, ...]
    class_sentences: dict[str, int]  # class_id -> winning sentence index
    extractions: dict[str, FeatureExtraction]  # canonical feature name -> extraction
    assignments: list[CdeAssignment]
    diagnostics: list[str] = field(default_factory=list)


class Extractor:
    def __init__(
        self,
        registry: CdeRegistry | None = None,
        backend: EmbeddingBackend | None = None,
        lexicons: EntityLexicons | None = None,
        config: ExtractorConfig | None = None,
        templates=None,
    ):
        self.registry = registry if registry is not None else load_registry()
        self.config = config or ExtractorConfig()
        self.lexicons = lexicons if lexicons is not None else load_lexicons()
        self.corpus = augmented_corpus(self.registry, templates)
        self.backend = backend if backend is not None else TfidfBackend(
            [example.sentence for example in self.corpus]
        )
        self.index = build_index(
            self.corpus,
            self.registry,
            k1=self.config.bm25_k1,
            b=self.config.bm25_b,
        )
        self._core_stems = {
            fclass.class_id: frozenset(
                stem(word)
                for term in fclass.core_terms
                for word in term.lower().split()
            )
            for fclass in self.registry.feature_classes
        }

    # ------------------------------------------------------------------

    def extract_text(self, raw: str, report_id: str = "report") -> ExtractionResult:
        return self.extract_report(parse_report(raw, report_id=report_id))

    def extract_report(self, parsed: ParsedReport) -> ExtractionResult:
        config = self.config
        tagged = tuple(tag_entities(s, self.lexicons) for s in parsed.sentences)
        parsed = replace(parsed, sentences=tagged)

        candidate_sets = tuple(
            select_candidates(
                sentence, self.index, self.backend, threshold=config.similarity_threshold
            )
            for sentence in tagged
        )
        winners = resolve_collisions(list(candidate_sets))

        diagnostics = list(parsed.diagnostics)
        extractions = {
            name: FeatureExtraction(name, value)
            for name, value in default_extractions(self.registry).items()
        }

        for fclass in self.registry.feature_classes:
            sentence_index = winners.get(fclass.class_id)
            if sentence_index is None:
                continue
            self._map_class(
                tagged[sentence_index], fclass, extractions, diagnostics
            )

        assignments = standardize(list(extractions.values()), self.registry)
        return ExtractionResult(
            report_id=parsed.report_id,
            parsed=parsed,
            candidates=candidate_sets,
            class_sentences=dict(winners),
            extractions=extractions,
            assignments=assignments,
            diagnostics=diagnostics,
        )

    # ------------------------------------------------------------------

    def _map_class(self, sentence, fclass, extractions, diagnostics) -> None:
        config = self.config
        registry = self.registry
        members = [registry.lookup_feature(name) for name in fclass.member_features]
        member_names = {cde.feature_name for cde in members}

        exemplar, similarity = best_exemplar(
            sentence, fclass, self.backend, list(self.corpus), registry
        )
        for name, label in exemplar.feature_values.items():
            cde = registry.lookup_feature(name)
            if cde.feature_name not in member_names or cde.kind is not CdeKind.CATEGORICAL:
                continue
            extractions[cde.feature_name] = FeatureExtraction(
                cde.feature_name,
                label,
                source_sentence=sentence.index,
                confidence=similarity,
                rule="exemplar",
            )

        if config.disjunction_rule and is_disjunctive(sentence.text):
            for cde in members:
                if cde.is_presence_like and extractions[cde.feature_name].rule == "exemplar":
                    extractions[cde.feature_name] = FeatureExtraction(
                        cde.feature_name,
                        UNSPECIFIED,
                        source_sentence=sentence.index,
                        rule="disjunction",
                    )

        if config.negation_override and negated_core_term(
            sentence, self._core_stems[fclass.class_id]
        ):
            for cde in members:
                current = extractions[cde.feature_name]
                if (
                    cde.is_presence_like
                    and current.value == UNSPECIFIED
                    and cde.value_by_label("absent") is not None
                ):
                    extractions[cde.feature_name] = FeatureExtraction(
                        cde.feature_name,
                        "absent",
                        source_sentence=sentence.index,
                        confidence=1.0,
                        rule="negation",
                    )

        for cde in members:
            if cde.kind is CdeKind.CATEGORICAL and not cde.is_presence_like:
                code = map_categorical(
                    sentence,
                    cde,
                    self.backend,
                    list(self.corpus),
                    registry,
                    floor=config.categorical_floor,
                    bilateral_inference=config.bilateral_inference,
                )
                label = cde.value_by_code(code).label
                if label != UNSPECIFIED:
                    extractions[cde.feature_name] = FeatureExtraction(
                        cde.feature_name,
                        label,
                        source_sentence=sentence.index,
                        rule="entity",
                    )
            elif cde.kind is CdeKind.NUMERIC:
                found = extract_numeric(
                    sentence, cde, self._core_stems[fclass.class_id]
                )
                if found is None:
                    continue
                raw_value, unit = found
                try:
                    converted = convert_unit(raw_value, unit, cde.unit or unit)
                except UnitConversionError as error:
                    diagnostics.append(f"{cde.feature_name}: {error}")
                    continue
                if not validate_bounds(converted, cde):
                    low, high = cde.bounds or (float("-inf"), float("inf"))
                    diagnostics.append(
                        f"{cde.feature_name}: value {converted} {cde.unit} outside "
                        f"bounds [{low}, {high}]; kept default {cde.default}"
                    )
                    continue
                extractions[cde.feature_name] = FeatureExtraction(
                    cde.feature_name,
                    converted,
                    unit=cde.unit,
                    source_sentence=sentence.index,
                    rule="numeric",
                )


def result_record(result: ExtractionResult) -> dict:
    """JSON-ready view of one extraction, stable across runs."""
    return {
        "report_id": result.report_id,
        "features": {
            name: {
                "value": extraction.value,
                "unit": extraction.unit,
                "sentence": extraction.source_sentence,
                "rule": extraction.rule,
            }
            for name, extraction in sorted(result.extractions.items())
        },
        "assignments": [
            {
                "cde_id": a.cde_id,
                "value_code": a.value_code,
                "value": a.value,
                "unit": a.unit,
            }
            for a in result.assignments
        ],
        "classes": {
            class_id: index for class_id, index in sorted(result.class_sentences.items())
        },
        "diagnostics": list(result.diagnostics),
    }
