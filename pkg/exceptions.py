"""
Error taxonomy shared by the object-security library, the protocol roles,
the simulator and the CLI.
"""


class OscarError(Exception):
    """Base class for every error raised by this package."""


# Codec and validation errors are ValueErrors as well, so callers that only
# know about bad input can still catch them.

class Malformed(OscarError, ValueError):
    """Input bytes do not decode (truncation, unknown kind/version/suite, bad delta)."""


class OversizeBody(OscarError, ValueError):
    pass


class NestingTooDeep(OscarError, ValueError):
    pass


class TokenTooLong(OscarError, ValueError):
    pass


class TooManySuites(OscarError, ValueError):
    pass


class ValidityInverted(OscarError, ValueError):
    pass


class ConfigInvalid(OscarError, ValueError):
    """Scenario or CLI configuration rejected; the message names the field."""


class KeyInvalid(OscarError):
    """Key missing, of the wrong type for the suite, or unusable."""


class AuthFailure(OscarError):
    """AEAD tag or signature check failed (wrong key, tampering, replay)."""


class NoSecret(OscarError):
    pass


class AmbiguousScope(OscarError):
    pass


class UnknownPath(OscarError):
    pass


class UnknownSigner(OscarError):
    pass


class CertificateExpired(OscarError):
    pass


class CapabilityMismatch(OscarError):
    pass


class NotAuthorized(OscarError):
    pass


class NoCookieMatch(OscarError):
    pass


class UnknownToken(OscarError):
    """A response arrived for a token the consumer has no pending request for."""


class RequestRejected(OscarError):
    """The producer answered with a CoAP error code instead of content."""

    def __init__(self, code, message=None):
        self.code = code
        super().__init__(message or f"request rejected with {code}")


class IoError(OscarError, OSError):
    pass
