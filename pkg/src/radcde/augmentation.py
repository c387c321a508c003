"""Template-based synthetic exemplars for categorical values lacking annotations.

Each categorical feature ships a template ("<subject> is {value}." for most
features) rendered once per (feature, value) pair that has no human exemplar,
so every value in the registry stays reachable by retrieval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import AugmentationGapError, RegistryError
from .registry import AnnotatedExample, CdeKind, CdeRegistry


@dataclass(frozen=True)
class AugmentationTemplate:
    feature_name: str
    pattern: str
    value_phrases: dict[str, str]  # value_code -> phrase for the {value} slot

    def render(self, value_code: str) -> str:
        phrase = self.value_phrases[value_code]
        sentence = self.pattern.format(value=phrase)
        if not sentence.strip():
            raise RegistryError(f"template for {self.feature_name} rendered empty text")
        return sentence


def load_templates(path: str | None = None) -> dict[str, AugmentationTemplate]:
    """Load templates keyed by feature name; None loads the packaged file."""
    if path is None:
        text = resources.files("radcde.data").joinpath(
            "augmentation_templates.json"
        ).read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    payload = json.loads(text)
    return {
        feature: AugmentationTemplate(
            feature_name=feature,
            pattern=entry["pattern"],
            value_phrases=dict(entry["value_phrases"]),
        )
        for feature, entry in payload.items()
    }


def human_coverage(registry: CdeRegistry) -> dict[tuple[str, str], int]:
    """Count human exemplars per (canonical feature name, value label)."""
    counts: dict[tuple[str, str], int] = {}
    for example in registry.human_exemplars():
        for feature, value in example.feature_values.items():
            name = registry.lookup_feature(feature).feature_name
            key = (name, value)
            counts[key] = counts.get(key, 0) + 1
    return counts


def augment(
    registry: CdeRegistry,
    coverage: dict[tuple[str, str], int],
    templates: dict[str, AugmentationTemplate] | None = None,
) -> list[AnnotatedExample]:
    """Render one synthetic exemplar per uncovered categorical (feature, value) pair.

    Pairs already covered by human exemplars are never emitted; duplicate
    renders (repeated labels in a value set) collapse to one sentence.
    """
    if templates is None:
        templates = load_templates()
    gaps: list[tuple[str, str]] = []
    augmented: list[AnnotatedExample] = []
    seen_sentences: set[str] = set()
    for cde in registry.cdes:
        if cde.kind is not CdeKind.CATEGORICAL:
            continue
        template = templates.get(cde.feature_name)
        for value in cde.value_set:
            if coverage.get((cde.feature_name, value.label), 0) > 0:
                continue
            if template is None or value.value_code not in template.value_phrases:
                gaps.append((cde.feature_name, value.label))
                continue
            sentence = template.render(value.value_code)
            if sentence in seen_sentences:
                continue
            seen_sentences.add(sentence)
            augmented.append(
                AnnotatedExample(
                    sentence=sentence,
                    feature_values={cde.feature_name: value.label},
                    source="augmented",
                )
            )
    if gaps:
        raise AugmentationGapError(gaps)
    return augmented


def augmented_corpus(
    registry: CdeRegistry,
    templates: dict[str, AugmentationTemplate] | None = None,
) -> list[AnnotatedExample]:
    """Human exemplars plus the synthetic fill for everything they don't cover."""
    synthetic = augment(registry, human_coverage(registry), templates)
    return list(registry.exemplars) + synthetic
