"""Report preprocessing: sectioning, sentence segmentation, tokenization, entity tagging.

Chest radiograph reports arrive as free text with uppercase section markers
("FINDINGS:", "IMPRESSION:") and inline subsection headers ("DEVICES:",
"LUNGS/PLEURA:").  Only Findings/Impression content is extracted; everything
else (technique, comparison, ...) is ignored.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from importlib import resources

from . import porter
from .errors import ReportParseError

# ---------------------------------------------------------------------------
# Section vocabulary
# ---------------------------------------------------------------------------

FINDINGS_NAMES = ("FINDINGS", "FINDING")
IMPRESSION_NAMES = ("IMPRESSION", "IMPRESSIONS", "CONCLUSION")
# Recognized non-content sections; they bound the Findings/Impression bodies.
OTHER_SECTION_NAMES = (
    "CLINICAL HISTORY",
    "EXAMINATION",
    "INDICATION",
    "COMPARISON",
    "TECHNIQUE",
    "PROCEDURE",
    "HISTORY",
    "EXAM",
)

_ALL_SECTION_NAMES = FINDINGS_NAMES + IMPRESSION_NAMES + OTHER_SECTION_NAMES

# Trailing-dot tokens that never terminate a sentence.
ABBREVIATIONS = frozenset(
    {"dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "cm.", "mm.", "no.", "e.g.", "i.e."}
)

_SECTION_RE = re.compile(
    r"\b(" + "|".join(re.escape(n) for n in _ALL_SECTION_NAMES) + r")\s*:"
)
# Inline subsection header: one or more all-caps words joined by spaces or
# slashes, immediately followed by a colon (e.g. "DEVICES:", "LUNGS/PLEURA:",
# "UPPER ABDOMEN:").
_HEADER_RE = re.compile(r"([A-Z][A-Z]+(?:[ /][A-Z][A-Z]+)*)\s*:")
_TOKEN_RE = re.compile(r"\d+\.\d+|[a-z0-9]+")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
_TERMINATOR_RE = re.compile(r"[.!?]+")


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Entity:
    """A tagged span within one sentence's text."""

    kind: str  # "location" | "modifier" | "finding" | "unit" | "number"
    text: str
    span: tuple[int, int]
    token_index: int


@dataclass(frozen=True)
class SentenceUnit:
    index: int
    section: str  # "findings" | "impression"
    header: str | None
    text: str
    span: tuple[int, int]  # char offsets into the raw report, header included
    tokens: tuple[str, ...]
    stems: tuple[str, ...]
    entities: tuple[Entity, ...] = ()


@dataclass(frozen=True)
class ParsedReport:
    report_id: str
    raw: str
    sentences: tuple[SentenceUnit, ...]
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class EntityLexicons:
    """Term lists per entity kind, matched longest-first and case-insensitively."""

    location: tuple[str, ...]
    modifier: tuple[str, ...]
    finding: tuple[str, ...]
    unit: tuple[str, ...]

    @classmethod
    def from_dict(cls, payload: dict) -> "EntityLexicons":
        return cls(
            location=tuple(payload.get("location", ())),
            modifier=tuple(payload.get("modifier", ())),
            finding=tuple(payload.get("finding", ())),
            unit=tuple(payload.get("unit", ())),
        )


def load_lexicons(path: str | None = None) -> EntityLexicons:
    """Load entity lexicons from a JSON file, defaulting to the packaged lists."""
    if path is None:
        text = resources.files("radcde.data").joinpath("lexicons.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    return EntityLexicons.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Tokenization and stemming
# ---------------------------------------------------------------------------


def tokenize_and_stem(text: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Lowercase, split on punctuation, and stem alphabetic tokens.

    Decimal numbers ("1.2") survive as single tokens and are never stemmed.
    """
    if not text:
        raise ReportParseError("cannot tokenize empty text")
    tokens = tuple(_TOKEN_RE.findall(text.lower()))
    stems = tuple(porter.stem(t) if t.isalpha() else t for t in tokens)
    return tokens, stems


def _token_spans(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in _TOKEN_RE.finditer(text.lower())]


# ---------------------------------------------------------------------------
# Sentence segmentation
# ---------------------------------------------------------------------------


def _is_abbreviation(body: str, dot_end: int) -> bool:
    tail = body[:dot_end]
    match = re.search(r"(\S+)$", tail)
    return bool(match) and match.group(1).lower() in ABBREVIATIONS


def _split_sentences(body: str, offset: int) -> list[tuple[int, int]]:
    """Return (start, end) spans of sentences within body, offset into the raw text."""
    spans: list[tuple[int, int]] = []
    start = None
    pos = 0
    while pos < len(body):
        if start is None:
            if body[pos].isspace():
                pos += 1
                continue
            start = pos
        match = _TERMINATOR_RE.search(body, pos)
        if match is None:
            break
        end = match.end()
        rest = body[end:]
        next_visible = rest.lstrip()
        boundary = (
            not next_visible
            or (rest[:1].isspace() and (next_visible[0].isupper() or next_visible[0].isdigit()))
        )
        if boundary and not _is_abbreviation(body, end):
            spans.append((start, end))
            start = None
        pos = end
    if start is not None:
        # Unterminated trailer, or a final sentence whose terminator sits on an
        # abbreviation-shaped token ("... measures 5 cm."): keep it either way.
        spans.append((start, len(body)))
    return [(s + offset, e + offset) for s, e in spans if body[s:e].strip()]


def _consume_header(segment: str) -> tuple[str | None, int]:
    """Match an inline subsection header at the start of a sentence segment."""
    match = _HEADER_RE.match(segment)
    if match is None:
        return None, 0
    rest = segment[match.end():]
    return match.group(1), len(segment) - len(rest.lstrip())


def _find_sections(raw: str) -> list[tuple[str, int, int]]:
    """Locate recognized top-level sections as (name, body_start, body_end)."""
    markers = [(m.start(), m.end(), m.group(1)) for m in _SECTION_RE.finditer(raw)]
    sections = []
    for i, (_, body_start, name) in enumerate(markers):
        body_end = markers[i + 1][0] if i + 1 < len(markers) else len(raw)
        sections.append((name, body_start, body_end))
    return sections


def parse_report(raw: str, report_id: str = "report") -> ParsedReport:
    """Extract ordered Findings/Impression sentences with headers and spans."""
    if not raw or not raw.strip():
        raise ReportParseError("report text is empty")

    sentences: list[SentenceUnit] = []
    diagnostics: list[str] = []
    saw_content_section = False

    for name, body_start, body_end in _find_sections(raw):
        if name in FINDINGS_NAMES:
            section = "findings"
        elif name in IMPRESSION_NAMES:
            section = "impression"
        else:
            continue
        saw_content_section = True
        body = raw[body_start:body_end]
        for span_start, span_end in _split_sentences(body, body_start):
            segment = raw[span_start:span_end]
            header, skip = _consume_header(segment)
            text = segment[skip:].strip()
            if not text:
                continue
            tokens, stems = tokenize_and_stem(text)
            sentences.append(
                SentenceUnit(
                    index=len(sentences),
                    section=section,
                    header=header,
                    text=text,
                    span=(span_start, span_end),
                    tokens=tokens,
                    stems=stems,
                )
            )

    if not saw_content_section:
        diagnostics.append("no findings or impression section found")

    return ParsedReport(
        report_id=report_id,
        raw=raw,
        sentences=tuple(sentences),
        diagnostics=tuple(diagnostics),
    )


# ---------------------------------------------------------------------------
# Entity tagging
# ---------------------------------------------------------------------------


def _kind_pattern(terms: tuple[str, ...], allow_digit_prefix: bool = False) -> re.Pattern | None:
    if not terms:
        return None
    ordered = sorted(terms, key=len, reverse=True)
    # Units may abut their figure ("3mm"); other kinds need a clean word edge.
    lookbehind = r"(?<![a-z])" if allow_digit_prefix else r"(?<![a-z0-9])"
    return re.compile(
        lookbehind + r"(?:" + "|".join(re.escape(t) for t in ordered) + r")(?![a-z0-9])",
        re.IGNORECASE,
    )


def tag_entities(sentence: SentenceUnit, lexicons: EntityLexicons) -> SentenceUnit:
    """Return a copy of the sentence with lexicon and number entities attached."""
    spans = _token_spans(sentence.text)

    def token_index_at(char_pos: int) -> int:
        for i, (s, e) in enumerate(spans):
            if s <= char_pos < e or char_pos < s:
                return i
        return max(len(spans) - 1, 0)

    entities: list[Entity] = []
    for kind, terms in (
        ("location", lexicons.location),
        ("modifier", lexicons.modifier),
        ("finding", lexicons.finding),
        ("unit", lexicons.unit),
    ):
        pattern = _kind_pattern(terms, allow_digit_prefix=(kind == "unit"))
        if pattern is None:
            continue
        for match in pattern.finditer(sentence.text):
            entities.append(
                Entity(
                    kind=kind,
                    text=match.group(0).lower(),
                    span=match.span(),
                    token_index=token_index_at(match.start()),
                )
            )
    for match in _NUMBER_RE.finditer(sentence.text):
        entities.append(
            Entity(
                kind="number",
                text=match.group(0),
                span=match.span(),
                token_index=token_index_at(match.start()),
            )
        )

    entities.sort(key=lambda e: (e.span[0], e.kind))
    return replace(sentence, entities=tuple(entities))
