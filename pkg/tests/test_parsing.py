"""Report segmentation, tokenization, and entity tagging behavior."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radcde.errors import ReportParseError
from radcde.parsing import (
    EntityLexicons,
    load_lexicons,
    parse_report,
    tag_entities,
    tokenize_and_stem,
)

STRUCTURED = (
    "CLINICAL HISTORY: Cough.\n"
    "TECHNIQUE: Single frontal view.\n"
    "FINDINGS: DEVICES: There are no tubes or lines present. "
    "LUNGS/PLEURA: The lungs are clear. There is no pleural effusion.\n"
    "IMPRESSION: No acute cardiopulmonary abnormality."
)


class TestSections:
    def test_only_findings_and_impression_yield_sentences(self):
        parsed = parse_report(STRUCTURED)
        texts = [s.text for s in parsed.sentences]
        assert texts == [
            "There are no tubes or lines present.",
            "The lungs are clear.",
            "There is no pleural effusion.",
            "No acute cardiopulmonary abnormality.",
        ]
        assert [s.section for s in parsed.sentences] == [
            "findings",
            "findings",
            "findings",
            "impression",
        ]
        assert parsed.diagnostics == ()

    def test_inline_headers_are_captured_and_stripped(self):
        parsed = parse_report(STRUCTURED)
        assert [s.header for s in parsed.sentences] == [
            "DEVICES",
            "LUNGS/PLEURA",
            None,
            None,
        ]

    def test_sentence_indices_are_sequential(self):
        parsed = parse_report(STRUCTURED)
        assert [s.index for s in parsed.sentences] == [0, 1, 2, 3]

    def test_spans_point_into_raw_text(self):
        parsed = parse_report(STRUCTURED)
        for sentence in parsed.sentences:
            start, end = sentence.span
            segment = parsed.raw[start:end]
            # The span covers the optional header; the text is what remains.
            assert segment.strip().endswith(sentence.text)

    def test_conclusion_alias_maps_to_impression(self):
        parsed = parse_report("CONCLUSION: Stable chest.")
        assert parsed.sentences[0].section == "impression"

    def test_unsectioned_report_yields_diagnostic(self):
        parsed = parse_report("Heart size normal. Lungs clear.")
        assert parsed.sentences == ()
        assert parsed.diagnostics == ("no findings or impression section found",)

    def test_empty_report_is_an_error(self):
        with pytest.raises(ReportParseError):
            parse_report("   \n ")

    def test_report_id_passthrough(self):
        assert parse_report(STRUCTURED, report_id="abc").report_id == "abc"


class TestSentenceSplitting:
    def test_abbreviation_does_not_terminate(self):
        parsed = parse_report("FINDINGS: Stable vs. Prior exam. Lungs clear.")
        assert [s.text for s in parsed.sentences] == [
            "Stable vs. Prior exam.",
            "Lungs clear.",
        ]

    def test_decimal_number_does_not_terminate(self):
        parsed = parse_report("FINDINGS: There is a 1.2 cm nodule. No effusion.")
        assert [s.text for s in parsed.sentences] == [
            "There is a 1.2 cm nodule.",
            "No effusion.",
        ]

    def test_lowercase_continuation_does_not_terminate(self):
        parsed = parse_report("FINDINGS: Opacity at the right base. likely atelectasis.")
        assert [s.text for s in parsed.sentences] == [
            "Opacity at the right base. likely atelectasis."
        ]

    def test_unterminated_final_sentence_kept(self):
        parsed = parse_report("FINDINGS: The lungs are clear")
        assert [s.text for s in parsed.sentences] == ["The lungs are clear"]

    def test_final_sentence_ending_with_abbreviation_kept(self):
        parsed = parse_report("FINDINGS: No effusion. The nodule measures 5 cm.")
        assert [s.text for s in parsed.sentences] == [
            "No effusion.",
            "The nodule measures 5 cm.",
        ]

    def test_report_of_single_abbreviation_terminated_sentence(self):
        parsed = parse_report("FINDINGS: The nodule measures 5 cm.")
        assert [s.text for s in parsed.sentences] == ["The nodule measures 5 cm."]


class TestTokenization:
    def test_tokens_and_stems(self):
        tokens, stems = tokenize_and_stem("There are small bilateral effusions.")
        assert tokens == ("there", "are", "small", "bilateral", "effusions")
        assert stems == ("there", "ar", "small", "bilater", "effus")

    def test_decimals_survive_unstemmed(self):
        tokens, stems = tokenize_and_stem("A 1.2 cm nodule, 3 mm depth.")
        assert "1.2" in tokens
        assert "1.2" in stems
        assert "3" in tokens

    def test_empty_text_raises(self):
        with pytest.raises(ReportParseError):
            tokenize_and_stem("")

    @given(st.text(max_size=80))
    def test_tokens_align_with_stems(self, text):
        if not text:
            return
        tokens, stems = tokenize_and_stem(text)
        assert len(tokens) == len(stems)


class TestEntityTagging:
    def test_lexicon_kinds_and_spans(self, sentence_of):
        sentence = sentence_of("There are small right and left pleural effusions.")
        by_kind = {}
        for entity in sentence.entities:
            by_kind.setdefault(entity.kind, []).append(entity.text)
        assert "small" in by_kind.get("modifier", [])
        assert "right" in by_kind.get("location", [])
        assert "left" in by_kind.get("location", [])
        for entity in sentence.entities:
            start, end = entity.span
            assert sentence.text[start:end].lower() == entity.text

    def test_number_and_spaced_unit(self, sentence_of):
        sentence = sentence_of("A tiny 3 mm nonspecific nodule in the left lung base.")
        numbers = [e for e in sentence.entities if e.kind == "number"]
        units = [e for e in sentence.entities if e.kind == "unit"]
        assert [n.text for n in numbers] == ["3"]
        assert [u.text for u in units] == ["mm"]
        assert units[0].span[0] - numbers[0].span[1] == 1

    def test_unit_glued_to_number_is_tagged(self, sentence_of):
        sentence = sentence_of("A 3mm nodule is seen.")
        units = [e for e in sentence.entities if e.kind == "unit"]
        numbers = [e for e in sentence.entities if e.kind == "number"]
        assert [u.text for u in units] == ["mm"]
        assert [n.text for n in numbers] == ["3"]
        assert units[0].span[0] == numbers[0].span[1]

    def test_word_boundaries_respected(self, sentence_of):
        # "small" must not fire inside "smallpox"; "cm" not inside "cmv".
        sentence = sentence_of("History of smallpox vaccination.")
        assert [e for e in sentence.entities if e.kind == "modifier"] == []

    def test_multiword_term_matches_longest_first(self):
        lexicons = EntityLexicons(
            location=("right lower lobe", "right"), modifier=(), finding=(), unit=()
        )
        parsed = parse_report("FINDINGS: Opacity in the right lower lobe.")
        sentence = tag_entities(parsed.sentences[0], lexicons)
        locations = [e.text for e in sentence.entities if e.kind == "location"]
        assert locations == ["right lower lobe"]

    def test_entities_sorted_by_position(self, sentence_of):
        sentence = sentence_of("A tiny 3 mm nonspecific nodule in the left lung base.")
        starts = [e.span[0] for e in sentence.entities]
        assert starts == sorted(starts)

    def test_token_index_points_at_covering_token(self, sentence_of):
        sentence = sentence_of("There are small right and left pleural effusions.")
        for entity in sentence.entities:
            token = sentence.tokens[entity.token_index]
            assert entity.text.split()[0].startswith(token) or token.startswith(
                entity.text.split()[0]
            )


class TestLexiconLoading:
    def test_packaged_lexicons_nonempty(self):
        lexicons = load_lexicons()
        assert lexicons.location and lexicons.modifier and lexicons.unit

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "lex.json"
        path.write_text('{"location": ["apex"], "unit": ["mm"]}', encoding="utf-8")
        lexicons = load_lexicons(str(path))
        assert lexicons.location == ("apex",)
        assert lexicons.modifier == ()
        assert lexicons.unit == ("mm",)
