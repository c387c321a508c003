"""Phase 2 value mapping: presence verdicts, categorical matching, numerics.

Presence values come from the most-similar annotated exemplar of a candidate
class.  Categorical attributes (laterality, severity, location, ...) are
matched from tagged location/modifier entities against each permitted value's
texts.  Numeric attributes are read from number+unit spans, converted to the
canonical unit, and bounds-checked.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .embedding import EmbeddingBackend, embed, safe_cosine
from .errors import MappingError, UnitConversionError
from .parsing import SentenceUnit, _token_spans
from .registry import (
    UNSPECIFIED,
    AnnotatedExample,
    CdeDefinition,
    CdeKind,
    CdeRegistry,
    FeatureClass,
)
from .porter import stem

PRESENCE_VALUES = ("present", "absent", UNSPECIFIED, "indeterminant")
DEFAULT_CATEGORICAL_FLOOR = 0.5

# Units convertible to each canonical unit, with multiplicative factors.
_CONVERSIONS: dict[str, dict[str, float]] = {
    "mm": {
        "mm": 1.0, "millimeter": 1.0, "millimeters": 1.0,
        "cm": 10.0, "centimeter": 10.0, "centimeters": 10.0,
        "m": 1000.0,
    },
    "ml": {"ml": 1.0, "cc": 1.0, "l": 1000.0},
}

_NEGATION_STEMS = frozenset({"no", "not", "without", "negat"})
_NEGATION_WINDOW = 4

_DISJUNCTION_RE = re.compile(r"\b(?:vs\.?|versus)\b|[a-zA-Z]/[a-zA-Z]")


@dataclass
class FeatureExtraction:
    feature_name: str
    value: str | float
    unit: str | None = None
    source_sentence: int | None = None
    confidence: float = 0.0
    rule: str = "default"


@dataclass
class CdeAssignment:
    cde_id: str
    value_code: str | None = None
    value: float | None = None
    unit: str | None = None
    provenance: FeatureExtraction | None = None


# ---------------------------------------------------------------------------
# Exemplar-based presence mapping
# ---------------------------------------------------------------------------


def best_exemplar(
    sentence: SentenceUnit,
    fclass: FeatureClass,
    backend: EmbeddingBackend,
    exemplars: list[AnnotatedExample],
    registry: CdeRegistry,
) -> tuple[AnnotatedExample, float]:
    """Most similar exemplar that annotates this class; ties keep corpus order."""
    members = set(fclass.member_features)
    candidates = [
        example for example in exemplars
        if any(
            registry.lookup_feature(f).feature_name in members
            for f in example.feature_values
        )
    ]
    if not candidates:
        raise MappingError(f"class {fclass.name} has no annotated exemplars")
    vectors = embed(backend, [sentence.text] + [e.sentence for e in candidates])
    sentence_vector, exemplar_vectors = vectors[0], vectors[1:]
    best_index, best_score = 0, -1.0
    for i, vector in enumerate(exemplar_vectors):
        score = safe_cosine(sentence_vector, vector)
        if score > best_score:
            best_index, best_score = i, score
    return candidates[best_index], best_score


def map_presence(
    sentence: SentenceUnit,
    fclass: FeatureClass,
    backend: EmbeddingBackend,
    exemplars: list[AnnotatedExample],
    registry: CdeRegistry,
) -> str:
    """Class-level presence verdict from the most-similar annotated exemplar."""
    exemplar, _ = best_exemplar(sentence, fclass, backend, exemplars, registry)
    members = set(fclass.member_features)
    fallback: str | None = None
    for feature, value in exemplar.feature_values.items():
        cde = registry.lookup_feature(feature)
        if cde.feature_name not in members or value not in PRESENCE_VALUES + ("single", "multiple"):
            continue
        if cde.is_presence_like:
            return value
        if fallback is None:
            fallback = value
    return fallback if fallback is not None else UNSPECIFIED


def negated_core_term(sentence: SentenceUnit, core_stems: frozenset[str]) -> bool:
    """True when a negation cue precedes a class core term within a short window."""
    stems = sentence.stems
    for i, token_stem in enumerate(stems):
        if token_stem in core_stems:
            window = stems[max(0, i - _NEGATION_WINDOW) : i]
            if any(s in _NEGATION_STEMS for s in window):
                return True
    return False


def is_disjunctive(text: str) -> bool:
    """Detects 'X versus Y' / 'X vs Y' / 'X/Y' hedged-alternative constructions."""
    return _DISJUNCTION_RE.search(text) is not None


# ---------------------------------------------------------------------------
# Entity-based categorical mapping
# ---------------------------------------------------------------------------


def value_texts(
    feature: CdeDefinition,
    exemplars: list[AnnotatedExample],
    registry: CdeRegistry,
    max_usages: int = 3,
) -> dict[str, list[str]]:
    """Matching texts per value_code: label, description, and exemplar usages."""
    usages: dict[str, list[str]] = {v.value_code: [] for v in feature.value_set}
    for example in exemplars:
        for name, label in example.feature_values.items():
            if registry.lookup_feature(name).feature_name != feature.feature_name:
                continue
            value = feature.value_by_label(label)
            if value and len(usages[value.value_code]) < max_usages:
                usages[value.value_code].append(example.sentence)
    texts = {}
    for value in feature.value_set:
        entries = [value.label]
        if value.description:
            entries.append(value.description)
        entries.extend(usages[value.value_code])
        texts[value.value_code] = entries
    return texts


def _side_entities(sentence: SentenceUnit) -> tuple[bool, bool]:
    left = right = False
    for entity in sentence.entities:
        if entity.kind not in ("location", "modifier"):
            continue
        tokens = entity.text.lower().split()
        left = left or "left" in tokens
        right = right or "right" in tokens
    return left, right


def map_categorical(
    sentence: SentenceUnit,
    feature: CdeDefinition,
    backend: EmbeddingBackend,
    exemplars: list[AnnotatedExample],
    registry: CdeRegistry,
    floor: float = DEFAULT_CATEGORICAL_FLOOR,
    bilateral_inference: bool = True,
) -> str:
    """Pick a value_code from tagged entities; below-floor matches mean unspecified.

    The 'unspecified' and 'absent' values are never entity-matched: absence is
    exemplar or negation evidence, not a phrase an entity can name.
    """
    default_code = str(feature.default)
    if feature.kind is not CdeKind.CATEGORICAL:
        raise MappingError(f"{feature.feature_name} is not categorical")

    bilateral = next(
        (v for v in feature.value_set if v.label == "bilateral"), None
    )
    if bilateral_inference and bilateral is not None:
        left, right = _side_entities(sentence)
        if left and right:
            return bilateral.value_code

    entities = [e for e in sentence.entities if e.kind in ("location", "modifier")]
    if not entities:
        return default_code
    texts = value_texts(feature, exemplars, registry)
    entity_vectors = embed(backend, [e.text for e in entities])
    best_code, best_score = default_code, 0.0
    for index, value in enumerate(feature.value_set):
        if value.label in (UNSPECIFIED, "absent"):
            continue
        candidate_vectors = embed(backend, texts[value.value_code])
        score = max(
            (safe_cosine(ev, cv) for ev in entity_vectors for cv in candidate_vectors),
            default=0.0,
        )
        # strictly-greater keeps earlier value_set order on ties
        if score > best_score:
            best_code, best_score = value.value_code, score
    if best_score >= floor:
        return best_code
    return default_code


# ---------------------------------------------------------------------------
# Numeric extraction
# ---------------------------------------------------------------------------


def extract_numeric(
    sentence: SentenceUnit,
    feature: CdeDefinition,
    core_stems: frozenset[str] = frozenset(),
) -> tuple[float, str] | None:
    """Number with an adjacent unit token; aggregate 'max' or nearest core term."""
    if feature.kind is not CdeKind.NUMERIC:
        raise MappingError(f"{feature.feature_name} is not numeric")
    numbers = [e for e in sentence.entities if e.kind == "number"]
    units = [e for e in sentence.entities if e.kind == "unit"]
    family = _CONVERSIONS.get(feature.unit or "", {})
    # (canonical magnitude, raw figure, unit, char position)
    candidates: list[tuple[float, float, str, int]] = []
    for number in numbers:
        unit = next(
            (u for u in units if 0 <= u.span[0] - number.span[1] <= 1), None
        )
        if unit is None or unit.text.lower() not in family:
            continue
        raw = float(number.text)
        candidates.append(
            (raw * family[unit.text.lower()], raw, unit.text.lower(), number.span[0])
        )
    if not candidates:
        return None
    if feature.aggregate == "max":
        chosen = max(candidates, key=lambda c: (c[0], -c[3]))
    else:
        core_positions = [
            span[0]
            for token, span in zip(sentence.tokens, _token_spans(sentence.text))
            if (stem(token) if token.isalpha() else token) in core_stems
        ]
        if core_positions:
            chosen = min(
                candidates,
                key=lambda c: (min(abs(c[3] - p) for p in core_positions), c[3]),
            )
        else:
            chosen = candidates[0]
    # report the raw figure in its source unit; conversion is the caller's step
    return chosen[1], chosen[2]


def convert_unit(value: float, unit: str, canonical: str) -> float:
    family = _CONVERSIONS.get(canonical)
    if family is None:
        raise UnitConversionError(f"no conversion table for canonical unit {canonical!r}")
    factor = family.get(unit.lower())
    if factor is None:
        raise UnitConversionError(f"cannot convert {unit!r} to {canonical!r}")
    return value * factor


def validate_bounds(value: float, feature: CdeDefinition) -> bool:
    if feature.bounds is None:
        return True
    low, high = feature.bounds
    return low <= value <= high


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def standardize(
    extractions: list[FeatureExtraction], registry: CdeRegistry
) -> list[CdeAssignment]:
    """Resolve feature:value extractions to one CdeAssignment per registry CDE."""
    by_feature: dict[str, FeatureExtraction] = {}
    for extraction in extractions:
        cde = registry.lookup_feature(extraction.feature_name)
        by_feature[cde.feature_name] = extraction
    missing = [c.feature_name for c in registry.cdes if c.feature_name not in by_feature]
    if missing:
        raise MappingError(f"extractions missing features: {missing}")
    assignments = []
    for cde in registry.cdes:
        extraction = by_feature[cde.feature_name]
        if cde.kind is CdeKind.CATEGORICAL:
            value = cde.value_by_label(str(extraction.value))
            if value is None:
                raise MappingError(
                    f"label {extraction.value!r} not in value set of {cde.feature_name}"
                )
            assignments.append(
                CdeAssignment(cde.cde_id, value_code=value.value_code, provenance=extraction)
            )
        else:
            assignments.append(
                CdeAssignment(
                    cde.cde_id,
                    value=float(extraction.value),
                    unit=cde.unit,
                    provenance=extraction,
                )
            )
    return assignments
