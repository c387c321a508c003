"""Structured feature extraction and CDE standardization for chest radiograph reports."""

from .embedding import EmbeddingVector, TfidfBackend, cosine, safe_cosine
from .errors import RadcdeError
from .pipeline import ExtractionResult, Extractor, ExtractorConfig
from .registry import CdeDefinition, CdeRegistry, load_registry

__version__ = "1.0.0"

__all__ = [
    "CdeDefinition",
    "CdeRegistry",
    "EmbeddingVector",
    "ExtractionResult",
    "Extractor",
    "ExtractorConfig",
    "RadcdeError",
    "TfidfBackend",
    "cosine",
    "load_registry",
    "safe_cosine",
    "__version__",
]
