"""Exception hierarchy."""


class StrongvelopeError(Exception):
    """Base class for every error raised by this package."""


class WireError(StrongvelopeError, ValueError):
    pass


class EncodingError(WireError):
    pass


class ParseError(WireError):
    """Raised when bytes cannot be split into TLV records.

    ``offset`` is the position in the input where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class StructuralError(WireError):
    pass


class UnsupportedVersionError(WireError):
    pass


class CryptoError(StrongvelopeError):
    pass


class KeyAgreementError(CryptoError):
    pass


class AuthenticityError(CryptoError):
    pass


class KeyIdError(StrongvelopeError):
    pass


class KeyConflictError(StrongvelopeError):
    pass


class SessionError(StrongvelopeError):
    pass


class MembershipError(SessionError):
    pass


class UnknownParticipantError(SessionError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class TransportError(StrongvelopeError):
    pass


class ScriptError(StrongvelopeError):
    """Malformed scenario script (as opposed to a failed expectation)."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
