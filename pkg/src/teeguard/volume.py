"""Shielded volumes: transparent encryption, Merkle tags, secret injection.

A volume is a directory of AEAD-encrypted files plus a ``.fspf`` manifest.
The manifest header carries the volume tag (the Merkle root over the file
index) in authenticated plaintext, so a client can *present* its tag for
admission before it holds the decryption key; after the key arrives the
shield recomputes the root from the decrypted index and refuses to serve
files if the header lied.

Merkle construction (docs/wire-formats.md): leaves are
``hash(path_utf8 || content_digest)`` in lexicographic path order, internal
nodes ``hash(left || right)``, an odd node is promoted unchanged, and the
empty volume's tag is ``hash(EMPTY_VOLUME_SENTINEL)``.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .crypto import DEFAULT_ENTROPY, Digest, Entropy, SymmetricKey
from .errors import (
    ConfigurationError,
    CryptoError,
    FreshnessViolation,
    IntegrityError,
    NotFoundError,
)

MANIFEST_NAME = ".fspf"
MANIFEST_MAGIC = b"FSPF1"
EMPTY_VOLUME_SENTINEL = b"teeguard-empty-volume-v1"
_MANIFEST_AAD_DOMAIN = b"teeguard-fspf-manifest-v1:"
_NONCE_INFO_DOMAIN = b"teeguard-fspf-nonce-v1:"


@dataclass(frozen=True)
class VolumeTag:
    """Merkle root over a volume's file index: the freshness anchor."""

    digest: Digest

    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def from_hex(cls, text: str) -> "VolumeTag":
        return cls(Digest.from_hex(text))


def empty_volume_tag() -> VolumeTag:
    return VolumeTag(crypto.hash_data(EMPTY_VOLUME_SENTINEL))


def merkle_root(index: dict[str, Digest]) -> VolumeTag:
    """Merkle root over ``path -> content digest`` entries."""
    if not index:
        return empty_volume_tag()
    level = [
        crypto.hash_data(path.encode() + index[path].data).data
        for path in sorted(index)
    ]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(crypto.hash_data(level[i] + level[i + 1]).data)
        if len(level) % 2 == 1:
            nxt.append(level[-1])
        level = nxt
    return VolumeTag(Digest(level[0]))


def _check_path(path: str) -> str:
    if not path or path.startswith("/") or path != path.strip():
        raise ConfigurationError(f"invalid volume path: {path!r}")
    parts = path.split("/")
    if any(p in ("", ".", "..") for p in parts) or path == MANIFEST_NAME:
        raise ConfigurationError(f"invalid volume path: {path!r}")
    return path


# ---------------------------------------------------------------------------
# Secret injection
# ---------------------------------------------------------------------------

_VAR_PATTERN = re.compile(rb"\$\$\$\$|\$\$([A-Za-z0-9_]+)\$\$")


def inject_secrets(template: bytes, secrets: dict[str, str | bytes]) -> bytes:
    """Resolve ``$$name$$`` references in ``template``.

    ``$$$$`` renders a literal ``$$``. The scan is leftmost,
    non-overlapping, with the escape taking precedence. An unresolved
    variable is a configuration error listing every missing name.
    """
    missing: list[str] = []

    def _value(name: str) -> bytes:
        if name not in secrets:
            missing.append(name)
            return b""
        v = secrets[name]
        return v if isinstance(v, bytes) else str(v).encode()

    def _sub(m: re.Match) -> bytes:
        if m.group(0) == b"$$$$":
            return b"$$"
        return _value(m.group(1).decode())

    resolved = _VAR_PATTERN.sub(_sub, template)
    if missing:
        raise ConfigurationError(
            f"unresolved template variables: {', '.join(sorted(set(missing)))}",
            missing=sorted(set(missing)),
        )
    return resolved


# ---------------------------------------------------------------------------
# Shielded volume
# ---------------------------------------------------------------------------


class ShieldedVolume:
    """Encrypted directory with an integrity index and a freshness tag.

    Single-writer; concurrent readers are safe. With ``write_back=True``
    writes stay in an in-process cache until :meth:`sync` (the mode the
    counter workloads use); the default is write-through.
    """

    def __init__(
        self,
        root: Path | str,
        fs_key: SymmetricKey,
        *,
        write_back: bool = False,
        entropy: Entropy = DEFAULT_ENTROPY,
        _index: dict[str, Digest] | None = None,
        _epochs: dict[str, int] | None = None,
    ):
        self.root = Path(root)
        self._key = fs_key
        self._entropy = entropy
        self.write_back = write_back
        self._index: dict[str, Digest] = _index or {}
        self._epochs: dict[str, int] = _epochs or {}
        self._cache: dict[str, bytes] = {}
        self._dirty: set[str] = set()
        self._overlay: dict[str, bytes] = {}
        self._lock = threading.RLock()
        self.tag = merkle_root(self._index)

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def create(
        cls,
        root: Path | str,
        fs_key: SymmetricKey,
        *,
        write_back: bool = False,
        entropy: Entropy = DEFAULT_ENTROPY,
    ) -> "ShieldedVolume":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if (root / MANIFEST_NAME).exists():
            raise ConfigurationError(f"volume already exists at {root}")
        vol = cls(root, fs_key, write_back=write_back, entropy=entropy)
        vol._write_manifest()
        return vol

    @classmethod
    def open(
        cls,
        root: Path | str,
        fs_key: SymmetricKey,
        *,
        expected_tag: VolumeTag | None = None,
        write_back: bool = False,
        entropy: Entropy = DEFAULT_ENTROPY,
    ) -> "ShieldedVolume":
        root = Path(root)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.exists():
            raise NotFoundError(f"no volume manifest at {root}")
        raw = manifest_path.read_bytes()
        if len(raw) < len(MANIFEST_MAGIC) + 32 or not raw.startswith(MANIFEST_MAGIC):
            raise IntegrityError(f"malformed manifest at {root}")
        header_tag = raw[len(MANIFEST_MAGIC) : len(MANIFEST_MAGIC) + 32]
        blob = raw[len(MANIFEST_MAGIC) + 32 :]
        aad = _MANIFEST_AAD_DOMAIN + header_tag
        plain = crypto.seal_decrypt(fs_key, blob, aad)
        data = json.loads(plain)
        index = {p: Digest.from_hex(e["digest"]) for p, e in data["files"].items()}
        epochs = {p: int(e["epoch"]) for p, e in data["files"].items()}
        vol = cls(
            root,
            fs_key,
            write_back=write_back,
            entropy=entropy,
            _index=index,
            _epochs=epochs,
        )
        if vol.tag.digest.data != header_tag:
            raise IntegrityError(f"manifest header tag does not match index at {root}")
        if expected_tag is not None and vol.tag != expected_tag:
            raise FreshnessViolation(
                f"volume tag {vol.tag.hex()} != expected {expected_tag.hex()} (rollback suspected)"
            )
        return vol

    @staticmethod
    def peek_tag(root: Path | str) -> VolumeTag:
        """Read the presented tag without the key; missing volume = empty tag."""
        manifest_path = Path(root) / MANIFEST_NAME
        if not manifest_path.exists():
            return empty_volume_tag()
        raw = manifest_path.read_bytes()
        if len(raw) < len(MANIFEST_MAGIC) + 32 or not raw.startswith(MANIFEST_MAGIC):
            raise IntegrityError(f"malformed manifest at {root}")
        return VolumeTag(Digest(raw[len(MANIFEST_MAGIC) : len(MANIFEST_MAGIC) + 32]))

    # -- manifest and crypto helpers ----------------------------------------

    def _write_manifest(self) -> None:
        files = {
            p: {"digest": d.hex(), "epoch": self._epochs[p]}
            for p, d in self._index.items()
        }
        plain = json.dumps(
            {"version": 1, "files": files}, sort_keys=True, separators=(",", ":")
        ).encode()
        tag_bytes = self.tag.digest.data
        blob = crypto.seal_encrypt(
            self._key, plain, _MANIFEST_AAD_DOMAIN + tag_bytes, self._entropy
        )
        tmp = self.root / (MANIFEST_NAME + ".tmp")
        tmp.write_bytes(MANIFEST_MAGIC + tag_bytes + blob)
        os.replace(tmp, self.root / MANIFEST_NAME)

    def _file_nonce(self, path: str, epoch: int) -> bytes:
        info = _NONCE_INFO_DOMAIN + path.encode() + b"\x00" + epoch.to_bytes(8, "big")
        return crypto.derive_bytes(self._key.data, info, crypto.AEAD_NONCE_LEN)

    def _encrypt_to_disk(self, path: str, plaintext: bytes) -> None:
        epoch = self._epochs[path]
        nonce = self._file_nonce(path, epoch)
        ct = crypto.aead_encrypt_with_nonce(self._key, nonce, plaintext, path.encode())
        disk = self.root / path
        disk.parent.mkdir(parents=True, exist_ok=True)
        disk.write_bytes(epoch.to_bytes(8, "big") + ct)

    def _decrypt_from_disk(self, path: str) -> bytes:
        disk = self.root / path
        try:
            raw = disk.read_bytes()
        except OSError as e:
            raise IntegrityError(f"unreadable volume file {path!r}: {e}") from e
        if len(raw) < 8:
            raise IntegrityError(f"truncated volume file {path!r}")
        epoch = int.from_bytes(raw[:8], "big")
        nonce = self._file_nonce(path, epoch)
        plaintext = crypto.aead_decrypt_with_nonce(
            self._key, nonce, raw[8:], path.encode()
        )
        digest = crypto.hash_data(plaintext)
        if digest != self._index[path]:
            raise FreshnessViolation(
                f"file {path!r} content does not match the index digest (rollback suspected)"
            )
        return plaintext

    # -- file operations ----------------------------------------------------

    def write_file(self, path: str, plaintext: bytes) -> VolumeTag:
        """Encrypt and store ``plaintext``; returns the new volume tag."""
        path = _check_path(path)
        with self._lock:
            self._index[path] = crypto.hash_data(plaintext)
            self._epochs[path] = self._epochs.get(path, 0) + 1
            self.tag = merkle_root(self._index)
            self._cache[path] = plaintext
            if self.write_back:
                self._dirty.add(path)
            else:
                self._encrypt_to_disk(path, plaintext)
                self._write_manifest()
            return self.tag

    def read_file(self, path: str) -> bytes:
        path = _check_path(path)
        with self._lock:
            if path in self._overlay:
                return self._overlay[path]
            if path not in self._index:
                raise NotFoundError(f"no such file in volume: {path!r}")
            if path in self._cache:
                return self._cache[path]
            plaintext = self._decrypt_from_disk(path)
            self._cache[path] = plaintext
            return plaintext

    def remove_file(self, path: str) -> VolumeTag:
        path = _check_path(path)
        with self._lock:
            if path not in self._index:
                raise NotFoundError(f"no such file in volume: {path!r}")
            del self._index[path]
            del self._epochs[path]
            self._cache.pop(path, None)
            self._dirty.discard(path)
            disk = self.root / path
            if disk.exists():
                disk.unlink()
            self.tag = merkle_root(self._index)
            if not self.write_back:
                self._write_manifest()
            return self.tag

    def rename_file(self, old: str, new: str) -> VolumeTag:
        old, new = _check_path(old), _check_path(new)
        with self._lock:
            content = self.read_file(old)
            self.remove_file(old)
            self.write_file(new, content)
            return self.tag

    def list_files(self) -> list[str]:
        with self._lock:
            return sorted(self._index)

    def compute_tag(self) -> VolumeTag:
        """Recompute the Merkle root from the current index."""
        with self._lock:
            self.tag = merkle_root(self._index)
            return self.tag

    def sync(self) -> VolumeTag:
        """Flush cached writes and the manifest to disk."""
        with self._lock:
            for path in sorted(self._dirty):
                self._encrypt_to_disk(path, self._cache[path])
            self._dirty.clear()
            self._write_manifest()
            return self.tag

    def close(self) -> VolumeTag:
        with self._lock:
            tag = self.sync()
            self._cache.clear()
            return tag

    def verify_all(self) -> None:
        """Read and authenticate every indexed file; raises naming the path."""
        with self._lock:
            for path in sorted(self._index):
                if path not in self._dirty:
                    self._decrypt_from_disk(path)

    # -- secret injection ---------------------------------------------------

    def inject(self, path: str, secrets: dict[str, str | bytes]) -> bytes:
        """Resolve the template at ``path`` in memory; later reads see the result.

        The resolved bytes live only in the overlay, never on disk.
        """
        with self._lock:
            template = self.read_file(path)
            resolved = inject_secrets(template, secrets)
            self._overlay[path] = resolved
            return resolved

    # -- file-based counter ---------------------------------------------------

    def file_counter_increment(self, path: str) -> int:
        """Open-read-increment-write-close through the shield; returns new value."""
        with self._lock:
            try:
                current = int.from_bytes(self.read_file(path), "big")
            except NotFoundError:
                current = 0
            new = current + 1
            self.write_file(path, new.to_bytes(8, "big"))
            return new
