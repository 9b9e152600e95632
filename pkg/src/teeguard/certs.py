"""X.509 plumbing for the secure channels.

All certificates use Ed25519 keys. An instance certificate carries the
subject's code measurement in a private extension
(OID 1.3.6.1.4.1.54392.5.10, raw 32 bytes) so clients can pin code
identity through the TLS layer.
"""

from __future__ import annotations

import datetime
import ipaddress
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)
from cryptography.x509.oid import NameOID

from . import crypto
from .crypto import SigningKeyPair
from .errors import CryptoError

MRE_EXTENSION_OID = x509.ObjectIdentifier("1.3.6.1.4.1.54392.5.10")


def _name(common_name: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])


def _now() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


def make_ca_certificate(common_name: str, keypair: SigningKeyPair) -> x509.Certificate:
    """Self-signed CA root certificate."""
    now = _now()
    return (
        x509.CertificateBuilder()
        .subject_name(_name(common_name))
        .issuer_name(_name(common_name))
        .public_key(keypair.private_key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .sign(private_key=keypair.private_key, algorithm=None)
    )


def issue_certificate(
    issuer_name: str,
    issuer_key: SigningKeyPair,
    subject_name: str,
    subject_pubkey: bytes,
    validity: datetime.timedelta,
    mre_hex: str | None = None,
    dns_names: tuple[str, ...] = (),
    not_before: datetime.datetime | None = None,
) -> x509.Certificate:
    """Issue a leaf certificate for a raw Ed25519 public key."""
    if len(subject_pubkey) != 32:
        raise CryptoError("subject public key must be 32 raw bytes")
    start = not_before or (_now() - datetime.timedelta(minutes=5))
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(subject_name))
        .issuer_name(_name(issuer_name))
        .public_key(Ed25519PublicKey.from_public_bytes(subject_pubkey))
        .serial_number(x509.random_serial_number())
        .not_valid_before(start)
        .not_valid_after(start + validity)
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
    )
    if mre_hex is not None:
        builder = builder.add_extension(
            x509.UnrecognizedExtension(MRE_EXTENSION_OID, bytes.fromhex(mre_hex)),
            critical=False,
        )
    if dns_names:
        sans: list[x509.GeneralName] = []
        for entry in dns_names:
            try:
                sans.append(x509.IPAddress(ipaddress.ip_address(entry)))
            except ValueError:
                sans.append(x509.DNSName(entry))
        builder = builder.add_extension(
            x509.SubjectAlternativeName(sans), critical=False
        )
    return builder.sign(private_key=issuer_key.private_key, algorithm=None)


def pubkey_from_cert(cert: x509.Certificate) -> bytes:
    """Raw 32-byte Ed25519 key of the certificate subject."""
    pub = cert.public_key()
    if not isinstance(pub, Ed25519PublicKey):
        raise CryptoError("certificate subject key is not Ed25519")
    return pub.public_bytes(Encoding.Raw, PublicFormat.Raw)


def mre_from_cert(cert: x509.Certificate) -> str | None:
    try:
        ext = cert.extensions.get_extension_for_oid(MRE_EXTENSION_OID)
    except x509.ExtensionNotFound:
        return None
    return ext.value.value.hex()


def verify_cert_signature(cert: x509.Certificate, issuer_pubkey: bytes) -> bool:
    return crypto.verify(issuer_pubkey, cert.tbs_certificate_bytes, cert.signature)


def fingerprint(cert: x509.Certificate) -> str:
    """SHA-256 over the DER encoding; the client identity used by policies."""
    return crypto.hash_data(cert.public_bytes(Encoding.DER)).hex()


def cert_to_pem(cert: x509.Certificate) -> bytes:
    return cert.public_bytes(Encoding.PEM)


def key_to_pem(keypair: SigningKeyPair) -> bytes:
    return keypair.private_key.private_bytes(
        Encoding.PEM, PrivateFormat.PKCS8, NoEncryption()
    )


def load_pem_certificate(pem: bytes) -> x509.Certificate:
    return x509.load_pem_x509_certificate(pem)


def write_identity(
    path: Path | str, cert: x509.Certificate, keypair: SigningKeyPair
) -> Path:
    """Write cert+key PEM bundle (the format ssl.load_cert_chain expects)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cert_to_pem(cert) + key_to_pem(keypair))
    return path
