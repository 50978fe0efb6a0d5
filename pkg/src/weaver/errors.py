"""Exception types shared across the package."""

from __future__ import annotations


class WeaverError(Exception):
    """Base class for every error this package raises on purpose."""


class ParseError(WeaverError):
    """A sketch source line could not be understood.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IndentError(ParseError):
    """Indentation jumped too far, mixed units, or the first line was indented."""


class MalformedSignature(ParseError):
    """A definition line has an unbalanced or otherwise unusable signature."""


class UnresolvedReference(ParseError):
    """A bare identifier line names a function that is not in scope."""


class DuplicateDefinition(ParseError):
    """Strict mode: a definition re-declares a name already in scope."""


class AmbiguousLine(ParseError):
    """Strict mode: a bare identifier that is already implied by the graph."""


class EmptyProgram(ParseError):
    """The source contained no function definitions."""


class MissingSignature(ParseError):
    """A description-only line appeared where signatures cannot be inferred."""


class BackendUnavailable(WeaverError):
    """The completion backend kept failing after retries."""


class RateLimited(BackendUnavailable):
    """The completion backend rejected the request for rate reasons."""


class FixtureMissing(WeaverError):
    """The mock backend has no (or not enough) completions for a request key."""


class InferenceFailed(WeaverError):
    """A signature could not be inferred from a description."""


class SynthesisFailed(WeaverError):
    """No candidate combination satisfied a component's constraints.

    ``scc_members`` names the functions of the component that failed.
    """

    def __init__(self, message: str, scc_members: tuple[str, ...] = ()):
        self.scc_members = scc_members
        super().__init__(message)


class BudgetExhausted(SynthesisFailed):
    """The evaluation budget ran out before a solution was found."""


class HarnessCrash(WeaverError):
    """The external evaluation harness died or spoke garbage on the wire."""


class NoEntryFunction(WeaverError):
    """A source file offered no identifiable entry point for backtranslation."""
