"""Synthetic exemplar generation: coverage fill, suppression, gaps, dedup."""

from __future__ import annotations

import pytest

from radcde.augmentation import (
    AugmentationTemplate,
    augment,
    augmented_corpus,
    human_coverage,
    load_templates,
)
from radcde.errors import AugmentationGapError, RegistryError
from radcde.registry import CdeKind


class TestHumanCoverage:
    def test_counts_canonical_pairs(self, registry):
        coverage = human_coverage(registry)
        assert coverage[("Presence_Pleural_Effusion", "absent")] >= 1
        assert all(count >= 1 for count in coverage.values())
        # Keys use canonical feature names, never aliases.
        for name, _ in coverage:
            assert registry.lookup_feature(name).feature_name == name


class TestAugment:
    def test_empty_coverage_renders_every_pair(self, registry):
        rendered = augment(registry, {})
        sentences = {e.sentence for e in rendered}
        assert "Nasogastric tube is malpositioned." in sentences
        assert "Vertebral compression fracture is absent." in sentences
        for example in rendered:
            assert example.source == "augmented"
            assert len(example.feature_values) == 1

    def test_human_covered_pairs_are_suppressed(self, registry):
        coverage = human_coverage(registry)
        rendered = augment(registry, coverage)
        for example in rendered:
            for feature, value in example.feature_values.items():
                assert coverage.get((feature, value), 0) == 0
        # Suppression strictly shrinks the output.
        assert len(rendered) < len(augment(registry, {}))

    def test_missing_template_raises_gap(self, registry):
        templates = load_templates()
        victim = next(
            c.feature_name for c in registry.cdes if c.kind is CdeKind.CATEGORICAL
        )
        del templates[victim]
        with pytest.raises(AugmentationGapError) as excinfo:
            augment(registry, {}, templates)
        assert any(feature == victim for feature, _ in excinfo.value.pairs)

    def test_missing_value_phrase_raises_gap(self, registry):
        templates = load_templates()
        cde = next(c for c in registry.cdes if c.kind is CdeKind.CATEGORICAL)
        template = templates[cde.feature_name]
        victim_code = cde.value_set[0].value_code
        phrases = dict(template.value_phrases)
        del phrases[victim_code]
        templates[cde.feature_name] = AugmentationTemplate(
            template.feature_name, template.pattern, phrases
        )
        with pytest.raises(AugmentationGapError):
            augment(registry, {}, templates)

    def test_duplicate_renders_collapse(self, registry):
        templates = load_templates()
        cde = next(
            c
            for c in registry.cdes
            if c.kind is CdeKind.CATEGORICAL and len(c.value_set) >= 3
        )
        template = templates[cde.feature_name]
        phrases = dict(template.value_phrases)
        first_code, second_code = cde.value_set[0].value_code, cde.value_set[1].value_code
        phrases[second_code] = phrases[first_code]  # force an identical sentence
        templates[cde.feature_name] = AugmentationTemplate(
            template.feature_name, template.pattern, phrases
        )
        rendered = augment(registry, {}, templates)
        duplicate_text = template.render(first_code)
        matching = [e for e in rendered if e.sentence == duplicate_text]
        assert len(matching) == 1
        assert matching[0].feature_values == {cde.feature_name: cde.value_set[0].label}

    def test_empty_render_rejected(self):
        template = AugmentationTemplate("X", "{value}", {"X.1": "  "})
        with pytest.raises(RegistryError):
            template.render("X.1")


class TestAugmentedCorpus:
    def test_human_exemplars_come_first(self, registry, corpus):
        n_human = len(registry.exemplars)
        assert [e.sentence for e in corpus[:n_human]] == [
            e.sentence for e in registry.exemplars
        ]
        assert all(e.source == "augmented" for e in corpus[n_human:])

    def test_every_categorical_pair_is_reachable(self, registry, corpus):
        covered = set()
        for example in corpus:
            for feature, value in example.feature_values.items():
                covered.add((registry.lookup_feature(feature).feature_name, value))
        for cde in registry.cdes:
            if cde.kind is not CdeKind.CATEGORICAL:
                continue
            for value in cde.value_set:
                assert (cde.feature_name, value.label) in covered, (
                    cde.feature_name,
                    value.label,
                )

    def test_no_duplicate_sentences_between_human_and_synthetic(self, registry, corpus):
        human = {e.sentence for e in registry.exemplars}
        synthetic = [e.sentence for e in corpus if e.source == "augmented"]
        assert len(synthetic) == len(set(synthetic))
        # Synthetic sentences are template renders, distinct from prose exemplars.
        assert not human & set(synthetic)


class TestTemplates:
    def test_packaged_templates_cover_all_categorical_features(self, registry):
        templates = load_templates()
        for cde in registry.cdes:
            if cde.kind is not CdeKind.CATEGORICAL:
                continue
            template = templates.get(cde.feature_name)
            assert template is not None, cde.feature_name
            for value in cde.value_set:
                assert value.value_code in template.value_phrases

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "templates.json"
        path.write_text(
            '{"X": {"pattern": "Widget is {value}.", "value_phrases": {"X.1": "fine"}}}',
            encoding="utf-8",
        )
        templates = load_templates(str(path))
        assert templates["X"].render("X.1") == "Widget is fine."
