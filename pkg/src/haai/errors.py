"""Exception hierarchy for the Haai front-end and runtime."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .syntax import SourceSpan


class HaaiError(Exception):
    """Base class; carries an optional source span for diagnostics."""

    def __init__(self, message: str, span: SourceSpan | None = None):
        self.message = message
        self.span = span
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.span is not None:
            return f"{self.span}: {type(self).__name__}: {self.message}"
        return f"{type(self).__name__}: {self.message}"


# reader / parser

class ParseError(HaaiError):
    pass


class UnbalancedParens(ParseError):
    pass


class InvalidNumber(ParseError):
    pass


class UnterminatedString(ParseError):
    pass


class NotADefinition(ParseError):
    pass


class MalformedDefr(ParseError):
    pass


class MalformedDef(ParseError):
    pass


class DuplicateParam(ParseError):
    pass


class DuplicateReactor(ParseError):
    pass


class BarWithoutTrampolines(ParseError):
    pass


class MissingTrampolineUpdates(ParseError):
    pass


class MalformedIf(ParseError):
    pass


class MalformedRho(ParseError):
    pass


class EmptyDeploy(ParseError):
    pass


class ReservedWord(ParseError):
    pass


# runtime

class RuntimeFault(HaaiError):
    pass


class UnboundIdentifier(RuntimeFault):
    def __init__(self, name: str, span: SourceSpan | None = None):
        self.name = name
        super().__init__(f"unbound identifier {name!r}", span)


class ArityMismatch(RuntimeFault):
    pass


class NotAReactor(RuntimeFault):
    pass


class MultiSinkArityMismatch(RuntimeFault):
    pass


class DepthExceeded(RuntimeFault):
    pass


class PrimitiveError(RuntimeFault):
    pass


class UnknownReactor(HaaiError):
    pass


class UnknownSource(HaaiError):
    pass


class EngineBusy(HaaiError):
    pass


# io boundary

class IOBoundaryError(HaaiError):
    pass


class QueueClosed(IOBoundaryError):
    pass


class ConnectFailed(IOBoundaryError):
    pass


class BadPayload(IOBoundaryError):
    pass


class WriteFailed(IOBoundaryError):
    pass


class ScriptNotFound(IOBoundaryError):
    pass
