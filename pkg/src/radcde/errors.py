"""Exception hierarchy shared across the package."""


class RadcdeError(Exception):
    """Base class for all package-specific errors."""


class RegistryError(RadcdeError):
    """Registry file missing, malformed, or semantically invalid."""


class DuplicateIdError(RegistryError):
    """A cde_id, value_code, or feature name occurs more than once."""


class FeatureNotFoundError(RegistryError):
    """Lookup of an unknown feature name or cde_id."""


class ReportParseError(RadcdeError):
    """Raised for empty or unusable report text."""


class EmbeddingError(RadcdeError):
    """Base class for embedding-backend failures."""


class BackendMismatchError(EmbeddingError):
    """Vectors from different backends were compared."""


class ZeroVectorError(EmbeddingError):
    """Cosine similarity requested against an all-zero vector."""


class BackendProtocolError(EmbeddingError):
    """Remote embedding service returned a malformed payload."""


class BackendTransportError(EmbeddingError):
    """Remote embedding service unreachable after retries."""


class MappingError(RadcdeError):
    """Value mapping failed (bad unit, malformed annotation, ...)."""


class UnitConversionError(MappingError):
    """Unit not present in the conversion table."""


class AugmentationGapError(RadcdeError):
    """No template available for an uncovered (feature, value) pair."""

    def __init__(self, pairs: list[tuple[str, str]]):
        self.pairs = pairs
        listing = ", ".join(f"{f}={v}" for f, v in pairs)
        super().__init__(f"no augmentation template for uncovered pairs: {listing}")


class LlmError(RadcdeError):
    """Base class for LLM-baseline failures."""


class PromptBudgetError(LlmError):
    """Prompt skeleton alone exceeds the token budget."""


class ReplayMissError(LlmError):
    """Replay client has no canned response for a prompt hash."""


class LlmTransportError(LlmError):
    """Remote LLM endpoint unreachable after retries."""


class EvaluationError(RadcdeError):
    """Base class for evaluation-harness failures."""


class GridMismatchError(EvaluationError):
    """Prediction and ground-truth grids do not cover the same cells."""


class UndefinedStatisticError(EvaluationError):
    """A statistic is undefined for the given input (empty table, no pairable items)."""
