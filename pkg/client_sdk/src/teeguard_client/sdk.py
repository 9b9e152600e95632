"""The session handle: attest, receive configuration, work with shielded
volumes, push tags.

Same handshake as the native runtime: ephemeral key, report and transport
certificate from the local quoting facility, instance verification
(certificate root or explicit report + channel-key pinning), then
``POST /session`` over the mutually-authenticated channel. Tag pushes are
synchronous; ``exit()`` pushes every volume's final tag with the exit
event and fails loudly if unacknowledged.
"""

from __future__ import annotations

import base64
import os
import tempfile
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from . import shield
from .errors import AttestationError, TagPushError
from .quoting import LocalQuoting
from .wire import Channel, Report, sha256


class Session:
    """One attested application session."""

    def __init__(self, channel: Channel, token: str, config: dict, data_root: Path):
        self._channel = channel
        self.token = token
        self.argv: list[str] = list(config.get("argv", []))
        self.env: dict[str, str] = dict(config.get("env", {}))
        self.secrets: dict[str, str] = dict(config.get("secrets", {}))
        self.strict_mode: bool = bool(config.get("strict_mode", False))
        self._volumes: dict[str, shield.ClientVolume] = {}
        self._exited = False
        for name, key_hex in config.get("fs_keys", {}).items():
            volume = shield.ClientVolume(data_root / name, bytes.fromhex(key_hex))
            volume.verify_tag(bytes.fromhex(config["fs_tags"][name]))
            self._volumes[name] = volume
        for entry in config.get("injection_files", []):
            volume_name, _, path = entry.partition(":")
            if volume_name in self._volumes and path:
                try:
                    self._volumes[volume_name].inject(path, self.secrets)
                except FileNotFoundError:
                    pass

    def volumes(self) -> list[str]:
        return sorted(self._volumes)

    def read_file(self, volume: str, path: str) -> bytes:
        return self._volumes[volume].read_file(path)

    def write_file(self, volume: str, path: str, data: bytes) -> None:
        """Open-write-close; pushes the new tag with the close event."""
        self._volumes[volume].write_file(path, data)
        self.push_tag(volume, "close")

    def push_tag(self, volume: str, event: str) -> int:
        status, body = self._channel.request_json(
            "POST",
            "/tags",
            {
                "session": self.token,
                "volume": volume,
                "tag": self._volumes[volume].tag.hex(),
                "event": event,
            },
        )
        if status != 200:
            raise TagPushError(f"tag push refused: {body}")
        return int(body.get("sequence", 0))

    def exit(self) -> None:
        """Final exit pushes for every volume; raises if unacknowledged."""
        if self._exited:
            return
        self._exited = True
        failures = []
        for name in sorted(self._volumes):
            try:
                self.push_tag(name, "exit")
            except Exception as e:
                failures.append((name, e))
        self._channel.close()
        if failures:
            raise TagPushError("; ".join(f"{n}: {e}" for n, e in failures))

    def close(self) -> None:
        self._channel.close()


def connect_and_attest(
    service_address: tuple[str, int],
    policy_name: str,
    code_bundle: bytes | Path | str,
    *,
    quoting: LocalQuoting,
    data_root: Path | str,
    volumes: tuple[str, ...] = (),
    service_name: str | None = None,
    ca_root_pem: bytes | None = None,
    permitted_service_mres: set[str] | None = None,
) -> Session:
    """Attest against the service and return a live session handle.

    ``code_bundle`` is the application's code bytes or a file of them; its
    hash is the measurement the policy must permit. ``volumes`` names the
    mount points to create under ``data_root`` when absent (a fresh mount
    presents the empty-volume tag). Instance trust comes from
    ``ca_root_pem`` (certificate path) or ``permitted_service_mres``
    (explicit path: verify the served report, pin the channel key).
    """
    if isinstance(code_bundle, (str, Path)):
        code = Path(code_bundle).read_bytes()
    else:
        code = code_bundle
    mre = sha256(code)
    data_root = Path(data_root)
    data_root.mkdir(parents=True, exist_ok=True)
    for name in volumes:
        (data_root / name).mkdir(exist_ok=True)

    private = Ed25519PrivateKey.from_private_bytes(os.urandom(32))
    pubkey = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    report = quoting.issue_report(mre, pubkey)
    cert_pem = quoting.issue_session_certificate(mre, pubkey)
    key_pem = private.private_bytes(Encoding.PEM, PrivateFormat.PKCS8, NoEncryption())
    fd, identity = tempfile.mkstemp(prefix="sdk-session-", suffix=".pem")
    os.close(fd)
    Path(identity).write_bytes(cert_pem + key_pem)

    channel = Channel(
        *service_address, client_identity=identity, server_ca_pem=ca_root_pem
    )
    try:
        channel.connect()
        if ca_root_pem is None:
            if permitted_service_mres is None:
                raise AttestationError("bad-signature", "no instance trust configured")
            status, raw = channel.request("GET", "/report")
            if status != 200:
                raise AttestationError("bad-signature", "report endpoint refused")
            served = Report.decode(raw)
            if not served.verify(quoting.public_key):
                raise AttestationError("bad-signature", "served report signature invalid")
            if served.mre.hex() not in {m.lower() for m in permitted_service_mres}:
                raise AttestationError("mre-not-permitted", "instance build not trusted")
            if channel.server_pubkey() != served.bound_pubkey:
                raise AttestationError(
                    "pubkey-mismatch", "TLS server key is not the attested instance key"
                )

        presented = {
            entry.name: shield.peek_tag(entry).hex()
            for entry in sorted(data_root.iterdir())
            if entry.is_dir()
        }
        request = {
            "policy": policy_name,
            "report": base64.b64encode(report.encode()).decode(),
            "volumes": presented,
        }
        if service_name:
            request["service"] = service_name
        status, body = channel.request_json("POST", "/session", request)
        if status != 200:
            raise AttestationError(
                body.get("error", "bad-signature"),
                body.get("detail", f"session refused ({status})"),
            )
        return Session(channel, body["session"], body["config"], data_root)
    except BaseException:
        channel.close()
        raise
    finally:
        Path(identity).unlink(missing_ok=True)
