"""Client-side shielded volume access, byte-compatible with the service's
volume format (docs/wire-formats.md): AES-256-GCM files with derived
nonces, an encrypted manifest whose authenticated plaintext header carries
the Merkle-root tag."""

from __future__ import annotations

import json
import os
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import FreshnessViolation, IntegrityError
from .wire import sha256

MANIFEST_NAME = ".fspf"
MANIFEST_MAGIC = b"FSPF1"
EMPTY_VOLUME_SENTINEL = b"teeguard-empty-volume-v1"
_MANIFEST_AAD_DOMAIN = b"teeguard-fspf-manifest-v1:"
_NONCE_INFO_DOMAIN = b"teeguard-fspf-nonce-v1:"


def empty_volume_tag() -> bytes:
    return sha256(EMPTY_VOLUME_SENTINEL)


def merkle_root(index: dict[str, bytes]) -> bytes:
    if not index:
        return empty_volume_tag()
    level = [sha256(path.encode() + index[path]) for path in sorted(index)]
    while len(level) > 1:
        nxt = [
            sha256(level[i] + level[i + 1]) for i in range(0, len(level) - 1, 2)
        ]
        if len(level) % 2 == 1:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def peek_tag(root: Path | str) -> bytes:
    """The presented tag of a volume directory; absent manifest = empty."""
    manifest = Path(root) / MANIFEST_NAME
    if not manifest.exists():
        return empty_volume_tag()
    raw = manifest.read_bytes()
    if not raw.startswith(MANIFEST_MAGIC) or len(raw) < len(MANIFEST_MAGIC) + 32:
        raise IntegrityError(f"malformed manifest at {root}")
    return raw[len(MANIFEST_MAGIC) : len(MANIFEST_MAGIC) + 32]


class ClientVolume:
    """Read/write access to one shielded volume given its key."""

    def __init__(self, root: Path | str, key: bytes):
        if len(key) != 32:
            raise IntegrityError("volume key must be 32 bytes")
        self.root = Path(root)
        self._key = key
        self._index: dict[str, bytes] = {}
        self._epochs: dict[str, int] = {}
        self._overlay: dict[str, bytes] = {}
        if (self.root / MANIFEST_NAME).exists():
            self._load_manifest()
        else:
            self.root.mkdir(parents=True, exist_ok=True)
            self._write_manifest()

    # -- manifest ---------------------------------------------------------------

    @property
    def tag(self) -> bytes:
        return merkle_root(self._index)

    def _load_manifest(self) -> None:
        raw = (self.root / MANIFEST_NAME).read_bytes()
        if not raw.startswith(MANIFEST_MAGIC):
            raise IntegrityError(f"malformed manifest at {self.root}")
        header_tag = raw[len(MANIFEST_MAGIC) : len(MANIFEST_MAGIC) + 32]
        blob = raw[len(MANIFEST_MAGIC) + 32 :]
        nonce, ciphertext = blob[:12], blob[12:]
        try:
            plain = AESGCM(self._key).decrypt(
                nonce, ciphertext, _MANIFEST_AAD_DOMAIN + header_tag
            )
        except InvalidTag as e:
            raise IntegrityError("manifest authentication failed") from e
        data = json.loads(plain)
        self._index = {
            p: bytes.fromhex(e["digest"]) for p, e in data["files"].items()
        }
        self._epochs = {p: int(e["epoch"]) for p, e in data["files"].items()}
        if self.tag != header_tag:
            raise IntegrityError("manifest header tag does not match index")

    def _write_manifest(self) -> None:
        files = {
            p: {"digest": d.hex(), "epoch": self._epochs[p]}
            for p, d in self._index.items()
        }
        plain = json.dumps(
            {"version": 1, "files": files}, sort_keys=True, separators=(",", ":")
        ).encode()
        tag = self.tag
        nonce = os.urandom(12)
        blob = nonce + AESGCM(self._key).encrypt(
            nonce, plain, _MANIFEST_AAD_DOMAIN + tag
        )
        tmp = self.root / (MANIFEST_NAME + ".tmp")
        tmp.write_bytes(MANIFEST_MAGIC + tag + blob)
        os.replace(tmp, self.root / MANIFEST_NAME)

    def verify_tag(self, expected: bytes) -> None:
        if self.tag != expected:
            raise FreshnessViolation(
                f"volume tag {self.tag.hex()[:16]}… != expected {expected.hex()[:16]}…"
            )

    # -- files -------------------------------------------------------------------

    def _file_nonce(self, path: str, epoch: int) -> bytes:
        info = _NONCE_INFO_DOMAIN + path.encode() + b"\x00" + epoch.to_bytes(8, "big")
        return HKDF(algorithm=hashes.SHA256(), length=12, salt=None, info=info).derive(
            self._key
        )

    def list_files(self) -> list[str]:
        return sorted(self._index)

    def read_file(self, path: str) -> bytes:
        if path in self._overlay:
            return self._overlay[path]
        if path not in self._index:
            raise FileNotFoundError(f"no such file in volume: {path!r}")
        raw = (self.root / path).read_bytes()
        epoch = int.from_bytes(raw[:8], "big")
        try:
            plain = AESGCM(self._key).decrypt(
                self._file_nonce(path, epoch), raw[8:], path.encode()
            )
        except InvalidTag as e:
            raise IntegrityError(f"file {path!r} failed authentication") from e
        if sha256(plain) != self._index[path]:
            raise FreshnessViolation(
                f"file {path!r} does not match the index digest (rollback suspected)"
            )
        return plain

    def write_file(self, path: str, plaintext: bytes) -> bytes:
        """Encrypt and store; returns the new volume tag."""
        epoch = self._epochs.get(path, 0) + 1
        ciphertext = AESGCM(self._key).encrypt(
            self._file_nonce(path, epoch), plaintext, path.encode()
        )
        disk = self.root / path
        disk.parent.mkdir(parents=True, exist_ok=True)
        disk.write_bytes(epoch.to_bytes(8, "big") + ciphertext)
        self._index[path] = sha256(plaintext)
        self._epochs[path] = epoch
        self._write_manifest()
        return self.tag

    # -- secret injection ---------------------------------------------------------

    def inject(self, path: str, secrets: dict[str, str]) -> bytes:
        """Resolve $$name$$ references in memory; later reads see the result."""
        import re

        template = self.read_file(path)
        missing: list[str] = []

        def _sub(m: re.Match) -> bytes:
            if m.group(0) == b"$$$$":
                return b"$$"
            name = m.group(1).decode()
            if name not in secrets:
                missing.append(name)
                return b""
            return str(secrets[name]).encode()

        resolved = re.sub(rb"\$\$\$\$|\$\$([A-Za-z0-9_]+)\$\$", _sub, template)
        if missing:
            raise KeyError(f"unresolved template variables: {sorted(set(missing))}")
        self._overlay[path] = resolved
        return resolved
