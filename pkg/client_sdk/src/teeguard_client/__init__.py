"""Thin client SDK for the teeguard trust-management service.

Speaks the service's wire protocol directly (attestation handshake,
session configuration, shielded volumes, tag pushes) without depending on
the service package.
"""

from .errors import (
    AttestationError,
    ChannelError,
    ClientError,
    FreshnessViolation,
    IntegrityError,
    TagPushError,
)
from .quoting import LocalQuoting
from .sdk import Session, connect_and_attest
from .shield import ClientVolume, empty_volume_tag, merkle_root, peek_tag
from .wire import Channel, Report

__version__ = "0.1.0"

__all__ = [
    "AttestationError",
    "Channel",
    "ChannelError",
    "ClientError",
    "ClientVolume",
    "FreshnessViolation",
    "IntegrityError",
    "LocalQuoting",
    "Report",
    "Session",
    "TagPushError",
    "connect_and_attest",
    "empty_volume_tag",
    "merkle_root",
    "peek_tag",
]
