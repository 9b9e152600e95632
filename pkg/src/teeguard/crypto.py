"""Primitive cryptographic operations behind a stable interface.

Concrete algorithms are deployment constants, declared once here and
documented in docs/wire-formats.md: SHA-256 for 32-byte digests, Ed25519
for signatures, AES-256-GCM for authenticated encryption. All randomness
flows through an injectable entropy source so tests can be deterministic.
"""

from __future__ import annotations

import enum
import hashlib
import secrets
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .errors import CryptoError, IntegrityError

HASH_ALGORITHM = "SHA-256"
SIGNATURE_ALGORITHM = "Ed25519"
AEAD_ALGORITHM = "AES-256-GCM"

DIGEST_LEN = 32
SYMMETRIC_KEY_LEN = 32
PUBLIC_KEY_LEN = 32
SIGNATURE_LEN = 64
AEAD_NONCE_LEN = 12


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


class Entropy:
    """Source of random bytes. Subclass to inject determinism in tests."""

    def random_bytes(self, n: int) -> bytes:
        raise NotImplementedError


class SystemEntropy(Entropy):
    """CSPRNG-backed entropy (the production default)."""

    def random_bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)


class DeterministicEntropy(Entropy):
    """Counter-mode SHA-256 stream from a seed. Tests only."""

    def __init__(self, seed: bytes | str):
        if isinstance(seed, str):
            seed = seed.encode()
        self._seed = seed
        self._counter = 0

    def random_bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            block = hashlib.sha256(
                self._seed + self._counter.to_bytes(8, "big")
            ).digest()
            out.extend(block)
            self._counter += 1
        return bytes(out[:n])


DEFAULT_ENTROPY = SystemEntropy()


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Digest:
    """32-byte collision-resistant hash output."""

    data: bytes

    def __post_init__(self):
        if not isinstance(self.data, bytes) or len(self.data) != DIGEST_LEN:
            raise CryptoError(f"digest must be {DIGEST_LEN} bytes")

    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        try:
            raw = bytes.fromhex(text)
        except ValueError as e:
            raise CryptoError(f"invalid digest hex: {e}") from e
        return cls(raw)

    def __repr__(self) -> str:
        return f"Digest({self.data.hex()[:16]}…)"


class KeyPurpose(enum.Enum):
    FS_ENCRYPTION = "fs-encryption"
    DB_ENCRYPTION = "db-encryption"
    SEALING = "sealing"


@dataclass(frozen=True)
class SymmetricKey:
    """256-bit AEAD key with a purpose label.

    Key bytes never appear in reprs; serialization outside sealed storage is
    the caller's responsibility to avoid.
    """

    data: bytes = field(repr=False)
    purpose: KeyPurpose = KeyPurpose.FS_ENCRYPTION

    def __post_init__(self):
        if len(self.data) != SYMMETRIC_KEY_LEN:
            raise CryptoError(f"symmetric key must be {SYMMETRIC_KEY_LEN} bytes")

    @classmethod
    def generate(
        cls, purpose: KeyPurpose, entropy: Entropy = DEFAULT_ENTROPY
    ) -> "SymmetricKey":
        return cls(entropy.random_bytes(SYMMETRIC_KEY_LEN), purpose)

    def __repr__(self) -> str:
        return f"SymmetricKey(purpose={self.purpose.value})"


@dataclass(frozen=True)
class SigningKeyPair:
    """Ed25519 keypair. ``public`` is the raw 32-byte verification key."""

    public: bytes
    _private: Ed25519PrivateKey = field(repr=False)

    @classmethod
    def generate(cls, entropy: Entropy = DEFAULT_ENTROPY) -> "SigningKeyPair":
        private = Ed25519PrivateKey.from_private_bytes(entropy.random_bytes(32))
        return cls._from_private(private)

    @classmethod
    def from_private_bytes(cls, raw: bytes) -> "SigningKeyPair":
        if len(raw) != 32:
            raise CryptoError("Ed25519 private key must be 32 bytes")
        return cls._from_private(Ed25519PrivateKey.from_private_bytes(raw))

    @classmethod
    def _from_private(cls, private: Ed25519PrivateKey) -> "SigningKeyPair":
        public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(public=public, _private=private)

    def private_bytes(self) -> bytes:
        """Raw private key, for sealing only."""
        return self._private.private_bytes(
            Encoding.Raw, PrivateFormat.Raw, NoEncryption()
        )

    @property
    def private_key(self) -> Ed25519PrivateKey:
        return self._private


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def hash_data(data: bytes) -> Digest:
    """SHA-256 of ``data``. Deterministic, always 32 bytes."""
    return Digest(hashlib.sha256(data).digest())


def sign(key: SigningKeyPair, msg: bytes) -> bytes:
    return key.private_key.sign(msg)


def verify(public: bytes, msg: bytes, sig: bytes) -> bool:
    """True iff ``sig`` is a valid signature of ``msg`` under ``public``.

    Malformed key material raises instead of returning False, so a garbage
    key can never be mistaken for a failed verification.
    """
    if not isinstance(public, bytes) or len(public) != PUBLIC_KEY_LEN:
        raise CryptoError("verification key must be 32 raw bytes")
    try:
        pub = Ed25519PublicKey.from_public_bytes(public)
    except Exception as e:
        raise CryptoError(f"malformed verification key: {e}") from e
    if len(sig) != SIGNATURE_LEN:
        return False
    try:
        pub.verify(sig, msg)
        return True
    except InvalidSignature:
        return False


def seal_encrypt(
    key: SymmetricKey,
    plaintext: bytes,
    aad: bytes = b"",
    entropy: Entropy = DEFAULT_ENTROPY,
) -> bytes:
    """AEAD-encrypt; output is nonce || ciphertext-with-tag."""
    nonce = entropy.random_bytes(AEAD_NONCE_LEN)
    return nonce + AESGCM(key.data).encrypt(nonce, plaintext, aad)


def seal_decrypt(key: SymmetricKey, blob: bytes, aad: bytes = b"") -> bytes:
    """Inverse of :func:`seal_encrypt`. Tampering raises IntegrityError."""
    if len(blob) < AEAD_NONCE_LEN + 16:
        raise IntegrityError("ciphertext too short")
    nonce, ciphertext = blob[:AEAD_NONCE_LEN], blob[AEAD_NONCE_LEN:]
    try:
        return AESGCM(key.data).decrypt(nonce, ciphertext, aad)
    except InvalidTag as e:
        raise IntegrityError("authentication failed: ciphertext or aad tampered, or wrong key") from e


def aead_encrypt_with_nonce(
    key: SymmetricKey, nonce: bytes, plaintext: bytes, aad: bytes = b""
) -> bytes:
    """AEAD with a caller-derived nonce (volume shield derives per-write nonces)."""
    if len(nonce) != AEAD_NONCE_LEN:
        raise CryptoError(f"nonce must be {AEAD_NONCE_LEN} bytes")
    return AESGCM(key.data).encrypt(nonce, plaintext, aad)


def aead_decrypt_with_nonce(
    key: SymmetricKey, nonce: bytes, ciphertext: bytes, aad: bytes = b""
) -> bytes:
    if len(nonce) != AEAD_NONCE_LEN:
        raise CryptoError(f"nonce must be {AEAD_NONCE_LEN} bytes")
    try:
        return AESGCM(key.data).decrypt(nonce, ciphertext, aad)
    except InvalidTag as e:
        raise IntegrityError("authentication failed: ciphertext or aad tampered, or wrong key") from e


def derive_bytes(root: bytes, info: bytes, n: int) -> bytes:
    """HKDF-SHA256 expansion of ``root`` for the given context label."""
    return HKDF(algorithm=hashes.SHA256(), length=n, salt=None, info=info).derive(root)


def derive_key(root: bytes, info: bytes, purpose: KeyPurpose) -> SymmetricKey:
    return SymmetricKey(derive_bytes(root, info, SYMMETRIC_KEY_LEN), purpose)
