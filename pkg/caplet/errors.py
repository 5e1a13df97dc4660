from __future__ import annotations

from typing import Optional

from caplet.lang.ast import Span


class CapletError(ValueError):
    """Base class for every error the verifier reports to the user."""

    def __init__(self, message: str, span: Optional[Span] = None, filename: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.span = span
        self.filename = filename

    def render(self, filename: Optional[str] = None) -> str:
        name = filename or self.filename or "<input>"
        if self.span is None:
            return f"{name}: error: {self.message}"
        return f"{name}:{self.span.line}:{self.span.col}: error: {self.message}"


class FrontendError(CapletError):
    """Lexical or syntax error in a .cap file."""
    pass


class ResolutionError(CapletError):
    """A name that does not resolve to any declaration."""
    pass


class TypeCheckError(CapletError):
    """Ill-typed expression, statement or annotation."""
    pass


class LoopOrRecursionError(CapletError):
    """A loop, or recursion among bodied functions."""
    pass


class FlowError(CapletError):
    """Root places that overlap at one program point."""
    pass


class EncodingError(CapletError):
    """A construct the verification-condition encoder cannot express."""
    pass


class SolverConfigError(CapletError):
    """The configured solver cannot be used."""
    pass


class ExpectationError(CapletError):
    """Malformed expectation comments in a client file."""
    pass
