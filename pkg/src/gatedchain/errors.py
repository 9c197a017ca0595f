"""Exception hierarchy shared by every gatedchain module."""


class GatedChainError(Exception):
    """Base class for all errors raised by this package."""


class EmptyDocument(GatedChainError):
    pass


class TemplateError(GatedChainError):
    """A template file is missing, malformed, or uses unknown placeholders."""


class TemplateMismatch(TemplateError):
    """A template was handed to the render function of a different role."""


class IndexOrderError(GatedChainError):
    pass


class MissingChunkText(GatedChainError):
    pass


class UnparseableVerdict(GatedChainError):
    def __init__(self, completion: str, expected: str):
        super().__init__(f"no {expected} marker found in completion {completion[:80]!r}")
        self.completion = completion


class OutOfOrderAppend(GatedChainError):
    pass


class UnrelatedAppend(GatedChainError):
    pass


class StaleConflict(GatedChainError):
    pass


class ConfigError(GatedChainError):
    pass


class BackendError(GatedChainError):
    """Raised by ``complete``. The engine attaches ``role`` and ``node``."""

    def __init__(self, message: str, *, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts
        self.role: str | None = None
        self.node: int | None = None


class Timeout(BackendError):
    pass


class TransportError(BackendError):
    pass


class RemoteStatus(BackendError):
    def __init__(self, code: int, body: str = "", *, attempts: int = 1):
        super().__init__(f"remote returned HTTP {code}: {body[:200]}", attempts=attempts)
        self.code = code


class ScriptExhausted(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class ChainAborted(GatedChainError):
    """A node or the manager failed; ``trace`` holds everything recorded so far."""

    def __init__(self, cause: BaseException, trace):
        super().__init__(f"chain aborted: {type(cause).__name__}: {cause}")
        self.cause = cause
        self.trace = trace


class MalformedRecord(GatedChainError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class NeedleTooLong(GatedChainError):
    pass


class MalformedTrace(GatedChainError):
    def __init__(self, reason: str, offset: int):
        super().__init__(f"{reason} (byte offset {offset})")
        self.offset = offset
