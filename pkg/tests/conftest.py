"""Shared fixtures.

The registry load and the TF-IDF fit over the exemplar corpus dominate test
startup cost, so the extractor and everything derived from it are built once
per session.  Tests treat these objects as read-only.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from radcde.parsing import parse_report, tag_entities
from radcde.pipeline import Extractor
from radcde.registry import load_registry

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def registry():
    return load_registry()


@pytest.fixture(scope="session")
def extractor(registry):
    return Extractor(registry=registry)


@pytest.fixture(scope="session")
def corpus(extractor):
    return extractor.corpus


@pytest.fixture(scope="session")
def backend(extractor):
    return extractor.backend


@pytest.fixture(scope="session")
def index(extractor):
    return extractor.index


@pytest.fixture(scope="session")
def sentence_of(extractor):
    """Parse one findings sentence and tag its entities with the shipped lexicons."""

    def build(text: str):
        parsed = parse_report("FINDINGS: " + text, report_id="fixture")
        assert len(parsed.sentences) == 1, parsed.sentences
        return tag_entities(parsed.sentences[0], extractor.lexicons)

    return build


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR
