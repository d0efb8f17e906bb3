"""Exception hierarchy.

Two roots matter to callers: ``ValidationError`` (bad input or bad model
output) and ``BackendError`` (the inference server could not be reached or
misbehaved at the transport level). The CLI maps them to exit codes 2 and 3.
"""

from __future__ import annotations


class IntrinsicsError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(IntrinsicsError):
    """Input or output failed a contract check."""


# -- conversation / registry -------------------------------------------------


class EmptyConversation(ValidationError):
    pass


class WrongTerminalRole(ValidationError):
    def __init__(self, expected: str, actual: str) -> None:
        super().__init__(f"conversation must end with {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class TerminalRoleMismatch(WrongTerminalRole):
    """Raised by renderers and intrinsics when the last turn has the wrong role."""


class ConsecutiveSameRole(ValidationError):
    def __init__(self, index: int, role: str) -> None:
        super().__init__(f"turns {index - 1} and {index} both have role {role!r}")
        self.index = index
        self.role = role


class MisplacedSystemTurn(ValidationError):
    def __init__(self, index: int) -> None:
        super().__init__(f"system turn at position {index}; only a leading system turn is allowed")
        self.index = index


class InvalidTurn(ValidationError):
    pass


class InvalidDocument(ValidationError):
    pass


class UnknownIntrinsic(ValidationError):
    def __init__(self, name: object) -> None:
        super().__init__(f"unknown intrinsic {name!r}")
        self.name = name


class MissingDocuments(ValidationError):
    def __init__(self, intrinsic: str) -> None:
        super().__init__(f"{intrinsic} requires at least one document")
        self.intrinsic = intrinsic


class InvalidInput(ValidationError):
    pass


# -- segmenter ---------------------------------------------------------------


class EmptyResponse(ValidationError):
    pass


class EmptyDocumentList(ValidationError):
    pass


class EmptyDocumentText(ValidationError):
    def __init__(self, doc_id: str) -> None:
        super().__init__(f"document {doc_id!r} has no sentences")
        self.doc_id = doc_id


class IdOutOfRange(ValidationError):
    def __init__(self, value: int, limit: int, kind: str = "sentence") -> None:
        super().__init__(f"{kind} id {value} out of range [0, {limit})")
        self.value = value
        self.limit = limit
        self.kind = kind


# -- parsing -----------------------------------------------------------------


class ParseError(ValidationError):
    """Model output could not be turned into a valid typed result.

    ``raw`` carries the offending completion text when known.
    """

    def __init__(self, message: str, raw: str | None = None) -> None:
        super().__init__(message)
        self.raw = raw


class MalformedOutput(ParseError):
    pass


class EmptyRewrite(ParseError):
    pass


class UnknownLabel(ParseError):
    pass


class NoPercentage(ParseError):
    pass


class MissingSentenceIds(ParseError):
    def __init__(self, missing: list[int], raw: str | None = None) -> None:
        super().__init__(f"missing sentence ids: {missing}", raw)
        self.missing = missing


class DuplicateSentenceId(ParseError):
    def __init__(self, value: int, raw: str | None = None) -> None:
        super().__init__(f"sentence id {value} appears more than once", raw)
        self.value = value


class NoPreferenceToken(ParseError):
    pass


class OutputIdOutOfRange(ParseError, IdOutOfRange):
    """An id emitted by the model is outside the tagged range."""

    def __init__(self, value: int, limit: int, kind: str = "sentence", raw: str | None = None) -> None:
        IdOutOfRange.__init__(self, value, limit, kind)
        self.raw = raw


# -- retrieval / flows / metrics ---------------------------------------------


class EmptyCorpus(ValidationError):
    pass


class ExpansionFailed(ValidationError):
    pass


class MetricError(ValidationError):
    pass


class FlowError(IntrinsicsError):
    """A flow step failed. ``trace`` holds the steps completed before the failure."""

    def __init__(self, step: str, cause: Exception, trace: list) -> None:
        super().__init__(f"flow aborted at {step}: {cause}")
        self.step = step
        self.cause = cause
        self.trace = trace


# -- backend -----------------------------------------------------------------


class BackendError(IntrinsicsError):
    pass


class BackendUnavailable(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class NoScriptMatch(BackendError):
    def __init__(self, prompt: str) -> None:
        preview = prompt[-120:].replace("\n", "\\n")
        super().__init__(f"no script rule matches prompt ending ...{preview}")
        self.prompt = prompt


class ScriptFormatError(ValidationError):
    pass
