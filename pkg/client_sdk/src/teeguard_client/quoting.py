"""Local quoting facility.

On a simulated host the quoting authority's key material lives in the
deployment directory (the platform trust boundary), which is how "the
local quoting enclave is reachable" looks here: the SDK reads it to issue
reports and session transport certificates for ephemeral keys, using the
same byte formats as the platform tooling.
"""

from __future__ import annotations

import datetime
import json
import os
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from cryptography.x509.oid import NameOID

from .wire import Report, sign_report_fields

MRE_EXTENSION_OID = x509.ObjectIdentifier("1.3.6.1.4.1.54392.5.10")
TRANSPORT_ISSUER = "teeguard-qa-transport"


class LocalQuoting:
    """Issues reports and session certs from the host's quoting key."""

    def __init__(self, qa_private_hex: str, platform_id: bytes):
        self._private = Ed25519PrivateKey.from_private_bytes(bytes.fromhex(qa_private_hex))
        self.platform_id = platform_id

    @classmethod
    def from_deployment(cls, deployment_dir: Path | str) -> "LocalQuoting":
        root = Path(deployment_dir)
        qa_hex = (root / "qa.key").read_text().strip()
        platform = json.loads((root / "platform" / "platform.json").read_text())
        return cls(qa_hex, bytes.fromhex(platform["platform_id"]))

    @property
    def public_key(self) -> bytes:
        return self._private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def issue_report(
        self, mre: bytes, bound_pubkey: bytes, nonce: bytes | None = None
    ) -> Report:
        return sign_report_fields(
            self._private,
            self.platform_id,
            mre,
            bound_pubkey,
            nonce if nonce is not None else os.urandom(16),
        )

    def issue_session_certificate(self, mre: bytes, bound_pubkey: bytes) -> bytes:
        """Short-lived TLS client certificate (PEM) for an ephemeral key."""
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        now = datetime.datetime.now(datetime.timezone.utc)
        cert = (
            x509.CertificateBuilder()
            .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "teeguard-session")]))
            .issuer_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, TRANSPORT_ISSUER)]))
            .public_key(Ed25519PublicKey.from_public_bytes(bound_pubkey))
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - datetime.timedelta(minutes=5))
            .not_valid_after(now + datetime.timedelta(hours=1))
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .add_extension(x509.UnrecognizedExtension(MRE_EXTENSION_OID, mre), critical=False)
            .sign(private_key=self._private, algorithm=None)
        )
        return cert.public_bytes(Encoding.PEM)
