"""Client-side error taxonomy, mirroring the service's refusal codes."""

from __future__ import annotations


class ClientError(Exception):
    """Base class for SDK errors."""


class ChannelError(ClientError):
    """Transport failure (handshake refusal, connection loss)."""


class AttestationError(ClientError):
    """Attestation or admission refused.

    ``code`` matches the service's taxonomy: bad-signature,
    pubkey-mismatch, unknown-policy, mre-rejected, platform-rejected,
    combination-rejected, tag-mismatch, restart-gate.
    """

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


class IntegrityError(ClientError):
    """Authenticated decryption failed: tampering or wrong key."""


class FreshnessViolation(ClientError):
    """Content is authentic but stale: rollback suspected."""


class TagPushError(ClientError):
    """A tag push was not acknowledged."""
