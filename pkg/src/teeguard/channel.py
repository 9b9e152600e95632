"""Client side of the secure channel.

TLS 1.3 only, so every suite is forward-secret. A channel either validates
the server chain against a configured root (certificate-based instance
attestation) or skips chain validation for explicit attestation, where the
caller verifies the served report and pins the server key instead.
"""

from __future__ import annotations

import http.client
import json
import ssl
from pathlib import Path

from cryptography import x509

from .errors import TeeguardError


class ChannelError(TeeguardError):
    """Transport-level failure (handshake refusal, connection loss)."""


class SecureChannel:
    """Persistent mutually-authenticated HTTPS connection."""

    def __init__(
        self,
        host: str,
        port: int,
        *,
        client_identity: Path | str | None = None,
        server_ca_pem: bytes | None = None,
        timeout: float = 10.0,
        tls: bool = True,
    ):
        self.host, self.port = host, port
        self.tls = tls
        if tls:
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
            context.minimum_version = ssl.TLSVersion.TLSv1_3
            if server_ca_pem is not None:
                context.check_hostname = False  # address-pinned, not name-pinned
                context.load_verify_locations(cadata=server_ca_pem.decode())
            else:
                context.check_hostname = False
                context.verify_mode = ssl.CERT_NONE
            if client_identity is not None:
                context.load_cert_chain(str(client_identity))
            self._conn = http.client.HTTPSConnection(
                host, port, context=context, timeout=timeout
            )
        else:
            self._conn = http.client.HTTPConnection(host, port, timeout=timeout)

    def connect(self) -> None:
        import socket

        try:
            self._conn.connect()
            self._conn.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except (ssl.SSLError, OSError) as e:
            raise ChannelError(f"handshake with {self.host}:{self.port} failed: {e}") from e

    def server_certificate(self) -> x509.Certificate:
        """The server's leaf certificate from the TLS session."""
        if self._conn.sock is None:
            self.connect()
        der = self._conn.sock.getpeercert(binary_form=True)
        if der is None:
            raise ChannelError("no server certificate on this channel")
        return x509.load_der_x509_certificate(der)

    def request(
        self,
        method: str,
        path: str,
        body: bytes | dict | None = None,
        content_type: str = "application/json",
    ) -> tuple[int, bytes]:
        payload: bytes | None
        if isinstance(body, dict):
            payload = json.dumps(body).encode()
        else:
            payload = body
        headers = {"Content-Type": content_type} if payload is not None else {}
        try:
            if self._conn.sock is None:
                self.connect()
            self._conn.request(method, path, body=payload, headers=headers)
            response = self._conn.getresponse()
            data = response.read()
            return response.status, data
        except (ssl.SSLError, http.client.HTTPException, OSError) as e:
            self.close()
            raise ChannelError(f"request {method} {path} failed: {e}") from e

    def request_json(
        self, method: str, path: str, body: dict | None = None
    ) -> tuple[int, dict]:
        status, data = self.request(method, path, body)
        try:
            parsed = json.loads(data) if data else {}
        except json.JSONDecodeError:
            parsed = {"raw": data.decode(errors="replace")}
        return status, parsed

    def close(self) -> None:
        try:
            self._conn.close()
        except Exception:
            pass

    def __enter__(self) -> "SecureChannel":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()
