"""Wire-level primitives: deployment constants, the report encoding, and
the TLS channel. Byte-exact per the service's docs/wire-formats.md."""

from __future__ import annotations

import hashlib
import http.client
import json
import socket
import ssl
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import ChannelError, IntegrityError

REPORT_VERSION = 1
PLATFORM_ID_LEN = 16
REPORT_NONCE_LEN = 16
REPORT_FIELD_LENS = (1, PLATFORM_ID_LEN, 32, 32, REPORT_NONCE_LEN, 64)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _encode_fields(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        out.append(len(f))
        out.extend(f)
    return bytes(out)


@dataclass(frozen=True)
class Report:
    """Attestation report: six length-prefixed fields, Ed25519-signed over
    the first five."""

    platform: bytes
    mre: bytes
    bound_pubkey: bytes
    nonce: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return _encode_fields(
            bytes([REPORT_VERSION]), self.platform, self.mre, self.bound_pubkey, self.nonce
        )

    def encode(self) -> bytes:
        return _encode_fields(
            bytes([REPORT_VERSION]),
            self.platform,
            self.mre,
            self.bound_pubkey,
            self.nonce,
            self.signature,
        )

    @classmethod
    def decode(cls, wire: bytes) -> "Report":
        fields = []
        pos = 0
        for expected in REPORT_FIELD_LENS:
            if pos >= len(wire) or wire[pos] != expected:
                raise IntegrityError("malformed report framing")
            pos += 1
            if pos + expected > len(wire):
                raise IntegrityError("truncated report")
            fields.append(wire[pos : pos + expected])
            pos += expected
        if pos != len(wire):
            raise IntegrityError("trailing bytes after report")
        if fields[0][0] != REPORT_VERSION:
            raise IntegrityError("unsupported report version")
        return cls(
            platform=fields[1],
            mre=fields[2],
            bound_pubkey=fields[3],
            nonce=fields[4],
            signature=fields[5],
        )

    def verify(self, qa_public: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(qa_public).verify(
                self.signature, self.signed_payload()
            )
            return True
        except InvalidSignature:
            return False


def sign_report_fields(
    qa_private: Ed25519PrivateKey, platform: bytes, mre: bytes, pubkey: bytes, nonce: bytes
) -> Report:
    unsigned = Report(
        platform=platform, mre=mre, bound_pubkey=pubkey, nonce=nonce, signature=b"\x00" * 64
    )
    return Report(
        platform=platform,
        mre=mre,
        bound_pubkey=pubkey,
        nonce=nonce,
        signature=qa_private.sign(unsigned.signed_payload()),
    )


class Channel:
    """Persistent TLS 1.3 HTTPS connection with a client certificate."""

    def __init__(
        self,
        host: str,
        port: int,
        *,
        client_identity: Path | str | None = None,
        server_ca_pem: bytes | None = None,
        timeout: float = 10.0,
    ):
        self.host, self.port = host, port
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        context.minimum_version = ssl.TLSVersion.TLSv1_3
        context.check_hostname = False
        if server_ca_pem is not None:
            context.load_verify_locations(cadata=server_ca_pem.decode())
        else:
            context.verify_mode = ssl.CERT_NONE
        if client_identity is not None:
            context.load_cert_chain(str(client_identity))
        self._conn = http.client.HTTPSConnection(host, port, context=context, timeout=timeout)

    def connect(self) -> None:
        try:
            self._conn.connect()
            self._conn.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except (ssl.SSLError, OSError) as e:
            raise ChannelError(f"handshake with {self.host}:{self.port} failed: {e}") from e

    def server_pubkey(self) -> bytes:
        """Raw Ed25519 key of the server's TLS certificate."""
        from cryptography import x509
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

        if self._conn.sock is None:
            self.connect()
        der = self._conn.sock.getpeercert(binary_form=True)
        cert = x509.load_der_x509_certificate(der)
        return cert.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def request(
        self, method: str, path: str, body: bytes | dict | None = None
    ) -> tuple[int, bytes]:
        payload = json.dumps(body).encode() if isinstance(body, dict) else body
        headers = {"Content-Type": "application/json"} if payload is not None else {}
        try:
            if self._conn.sock is None:
                self.connect()
            self._conn.request(method, path, body=payload, headers=headers)
            response = self._conn.getresponse()
            return response.status, response.read()
        except (ssl.SSLError, http.client.HTTPException, OSError) as e:
            self.close()
            raise ChannelError(f"request {method} {path} failed: {e}") from e

    def request_json(self, method: str, path: str, body: dict | None = None) -> tuple[int, dict]:
        status, data = self.request(method, path, body)
        try:
            return status, json.loads(data) if data else {}
        except json.JSONDecodeError:
            return status, {"raw": data.decode(errors="replace")}

    def close(self) -> None:
        try:
            self._conn.close()
        except Exception:
            pass
