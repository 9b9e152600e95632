"""Exception taxonomy shared across the service.

Every refusal the service can produce maps to exactly one class here so
callers (and the HTTP layer) can distinguish failure modes without parsing
messages.
"""

from __future__ import annotations


class TeeguardError(Exception):
    """Base class for all errors raised by this package."""


class CryptoError(TeeguardError):
    """Malformed key material or misuse of a primitive."""


class IntegrityError(CryptoError):
    """Authenticated decryption or signature binding failed: tampering signal."""


class FreshnessViolation(TeeguardError):
    """Content is authentic but stale: a rollback is suspected."""


class NotFoundError(TeeguardError):
    """Referenced object (policy, file, session) does not exist."""


class AuthorizationError(TeeguardError):
    """Caller's certificate does not own the target object."""


class GovernanceError(TeeguardError):
    """The policy board rejected (or never approved) the change."""


class ConfigurationError(TeeguardError):
    """Policy or template is internally inconsistent (missing refs, bad fields)."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class PolicySyntaxError(TeeguardError):
    """Unparseable policy text."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class AttestationError(TeeguardError):
    """Session or instance attestation failed.

    ``code`` is one of: bad-signature, pubkey-mismatch, unknown-policy,
    mre-rejected, platform-rejected, tag-mismatch, restart-gate,
    combination-rejected.
    """

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


class RestartGateError(TeeguardError):
    """Strict mode: previous execution did not push its final tag at exit."""


class VersionMismatch(TeeguardError):
    """Database version and platform counter disagree at startup."""


class ConcurrentInstance(TeeguardError):
    """Another instance incremented the counter first."""


class StoreIntegrityError(IntegrityError):
    """Encrypted store failed authentication at open (tamper or wrong key)."""
