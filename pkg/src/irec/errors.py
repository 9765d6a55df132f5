"""Exception hierarchy shared by all irec modules."""


class IrecError(Exception):
    """Base class for all errors raised by this package."""


# --- beacon / crypto ---

class UnknownInterface(IrecError):
    pass


class ValidityExceedsCap(IrecError):
    pass


class LoopDetected(IrecError):
    pass


class LinkMismatch(IrecError):
    pass


class BadChain(IrecError):
    """Signature chain broken; carries the first affected hop index."""

    def __init__(self, hop_index: int, message: str = ""):
        self.hop_index = hop_index
        super().__init__(message or f"signature chain broken at hop {hop_index}")


class UnknownAsKey(IrecError):
    pass


class MissingMetric(IrecError):
    pass


class DecodeError(IrecError):
    pass


# --- topology / parsing ---

class ParseError(IrecError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateLink(IrecError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleParameters(IrecError):
    pass


# --- gateways ---

class UnknownEgressInterface(IrecError):
    pass


class Disconnected(IrecError):
    pass


# --- routing programs / RACs ---

class TooLarge(IrecError):
    pass


class NotFound(IrecError):
    pass


class HashMismatch(IrecError):
    pass


class StepBudgetExceeded(IrecError):
    pass


class MemoryBudgetExceeded(IrecError):
    pass


# --- simulation / CLI ---

class ConfigError(IrecError):
    pass


class UnknownAs(IrecError):
    pass


class MissingResult(IrecError):
    pass
