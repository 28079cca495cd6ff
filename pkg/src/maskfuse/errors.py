"""Exception hierarchy.

EngineError covers everything caused by bad input data or configuration
(CLI exit code 1). Anything else escaping the engine is an internal
error (exit code 2).
"""


class EngineError(Exception):
    """Base class for input/data errors."""


class CorruptRle(EngineError):
    """RLE counts inconsistent with the declared mask dimensions."""


class DimensionMismatch(EngineError):
    """Two grids/vectors that must share a shape do not."""


class AllVoid(EngineError):
    """Every foreground pixel of a mask is void; no closed-set vote exists."""


class TaxonomyMismatch(EngineError):
    """Class ids or taxonomy ids inconsistent between objects."""


class EmptyCaption(EngineError):
    """No candidate phrase survives stopword filtering."""


class MissingRegionEmbedding(EngineError):
    """No embedding stored for a mask region key."""


class MissingTextEmbedding(EngineError):
    """No embedding stored for a candidate text (strict mode only)."""


class ZeroVector(EngineError):
    """Cosine similarity is undefined for a zero vector."""


class EmptyMatrix(EngineError):
    """No pixel was ever accumulated into the confusion matrix."""


class SchemaError(EngineError):
    """A fixture file violates its format (magic, version, layout, fields)."""


class DanglingReference(EngineError):
    """A manifest entry references an id or file that does not exist."""


class SpecError(EngineError):
    """Synthetic scene parameters cannot be satisfied."""
