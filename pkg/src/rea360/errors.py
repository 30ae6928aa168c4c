"""Exception types shared across the package.

The CLI maps these onto exit codes: schema problems exit 2, backend
problems exit 3, parse/protocol problems exit 4.
"""

from __future__ import annotations


class ReaError(Exception):
    """Base class for every error this package raises deliberately."""


class SchemaError(ReaError):
    """A document, config value, or stored file violates its schema."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyAnswerSetError(SchemaError):
    """An answer set is empty, or all of its aliases normalize to nothing."""

    def __init__(self, question_index: int) -> None:
        super().__init__(
            f"answers[{question_index}]",
            "answer set is empty after normalization",
        )


class BackendConfigError(ReaError):
    """The backend is not configured (missing credential, base URL, rules)."""


class TransportError(ReaError):
    """A completion request failed at the transport level after retries."""


class DecodeError(ReaError):
    """A completion response body could not be decoded."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


class UnknownTemplateError(ReaError):
    """A prompt template id is not in the registry."""


class MissingPlaceholderError(ReaError):
    """A required placeholder has no binding."""

    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"missing binding for placeholder {{{name}}}")


class UnresolvedPlaceholderError(ReaError):
    """A placeholder slot survived rendering."""

    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"placeholder {{{name}}} left unresolved after rendering")


class InvalidPairError(ReaError):
    """A peer review paired an agent with itself."""


class CardinalityError(ReaError):
    """A review set has the wrong number of reviews of one kind."""

    def __init__(self, kind: str, message: str) -> None:
        self.kind = kind
        super().__init__(f"{kind}: {message}")


class ParseError(ReaError):
    """Structured model output could not be parsed."""


class CrewCountError(ParseError):
    """The leader produced a crew count outside the configured range."""

    def __init__(self, count: int, crew_min: int, crew_max: int) -> None:
        self.count = count
        super().__init__(
            f"leader produced {count} sub-tasks, outside range [{crew_min}, {crew_max}]"
        )


class ScoreParseError(ParseError):
    """An evaluator output lacks a usable score for a configured criterion."""

    def __init__(self, criterion: str, message: str) -> None:
        self.criterion = criterion
        super().__init__(f"{criterion}: {message}")


class ScoreRangeError(ReaError):
    """A rubric score lies outside the 1-20 scale."""


class MixedKindError(ReaError):
    """A batch aggregation mixed task kinds."""


class EmptyInputError(ReaError):
    """An aggregation received no inputs."""


class CorruptPoolError(ReaError):
    """A persisted experience pool contains an invalid entry."""

    def __init__(self, index: int, message: str) -> None:
        self.index = index
        super().__init__(f"entry {index}: {message}")


class UnknownVariantError(ReaError):
    """An ablation variant name is not recognized."""
