"""Deterministic stand-in for the TEE platform.

Provides code measurements, a quoting authority that signs attestation
reports, per-platform sealed storage, and a rate-limited monotonic counter.
The platform's persistence files (counter value, sealing root) model
hardware state and are declared inside the trust boundary: the simulation
protects them against accidental corruption, not against the simulated
adversary, who by assumption cannot roll back hardware counters.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .crypto import DEFAULT_ENTROPY, Digest, Entropy, KeyPurpose, SigningKeyPair
from .errors import AttestationError, CryptoError, IntegrityError

PLATFORM_ID_LEN = 16
REPORT_NONCE_LEN = 16
REPORT_VERSION = 1
DEFAULT_MIN_INCREMENT_INTERVAL = 0.050  # seconds

_COUNTER_DIGEST_DOMAIN = b"teeguard-platform-counter-v1:"


# ---------------------------------------------------------------------------
# Clocks
# ---------------------------------------------------------------------------


class Clock:
    """Time source for rate limiting. Virtual mode lets tests run fast."""

    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, seconds: float) -> None:
        raise NotImplementedError


class RealClock(Clock):
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock(Clock):
    """Logical clock: sleeping advances time instantly."""

    def __init__(self):
        self._now = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            if seconds > 0:
                self._now += seconds


# ---------------------------------------------------------------------------
# Measurements and identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    """Hash of a code bundle: identifies *what code* runs in the enclave."""

    mre: Digest

    def hex(self) -> str:
        return self.mre.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Measurement":
        return cls(Digest.from_hex(text))


def measure(code: bytes) -> Measurement:
    return Measurement(crypto.hash_data(code))


@dataclass(frozen=True)
class PlatformId:
    """Opaque 16-byte identifier of a simulated host CPU."""

    data: bytes

    def __post_init__(self):
        if len(self.data) != PLATFORM_ID_LEN:
            raise CryptoError(f"platform id must be {PLATFORM_ID_LEN} bytes")

    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, text: str) -> "PlatformId":
        return cls(bytes.fromhex(text))

    @classmethod
    def generate(cls, entropy: Entropy = DEFAULT_ENTROPY) -> "PlatformId":
        return cls(entropy.random_bytes(PLATFORM_ID_LEN))


# ---------------------------------------------------------------------------
# Attestation reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttestationReport:
    """Signed binding of an ephemeral public key to (platform, measurement).

    Wire format (docs/wire-formats.md): six length-prefixed fields in fixed
    order -- version:u8, platform:16B, mre:32B, pubkey:32B, nonce:16B,
    sig:64B -- each prefixed by one length byte. The signature covers the
    encoding of the first five fields.
    """

    platform: PlatformId
    mre: Measurement
    bound_pubkey: bytes
    nonce: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return _encode_fields(
            bytes([REPORT_VERSION]),
            self.platform.data,
            self.mre.mre.data,
            self.bound_pubkey,
            self.nonce,
        )

    def encode(self) -> bytes:
        return _encode_fields(
            bytes([REPORT_VERSION]),
            self.platform.data,
            self.mre.mre.data,
            self.bound_pubkey,
            self.nonce,
            self.signature,
        )

    @classmethod
    def decode(cls, wire: bytes) -> "AttestationReport":
        fields = _decode_fields(wire, (1, PLATFORM_ID_LEN, 32, 32, REPORT_NONCE_LEN, 64))
        if fields[0][0] != REPORT_VERSION:
            raise IntegrityError(f"unsupported report version {fields[0][0]}")
        return cls(
            platform=PlatformId(fields[1]),
            mre=Measurement(Digest(fields[2])),
            bound_pubkey=fields[3],
            nonce=fields[4],
            signature=fields[5],
        )

    def verify(self, qa_public: bytes) -> bool:
        return crypto.verify(qa_public, self.signed_payload(), self.signature)


def _encode_fields(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        if len(f) > 255:
            raise CryptoError("field too long for length-prefixed encoding")
        out.append(len(f))
        out.extend(f)
    return bytes(out)


def _decode_fields(wire: bytes, expected_lens: tuple[int, ...]) -> list[bytes]:
    fields: list[bytes] = []
    pos = 0
    for expected in expected_lens:
        if pos >= len(wire):
            raise IntegrityError("truncated report")
        n = wire[pos]
        pos += 1
        if n != expected:
            raise IntegrityError(f"field length {n} != expected {expected}")
        if pos + n > len(wire):
            raise IntegrityError("truncated report")
        fields.append(wire[pos : pos + n])
        pos += n
    if pos != len(wire):
        raise IntegrityError("trailing bytes after report")
    return fields


class QuotingAuthority:
    """Signs attestation reports for registered platforms only.

    Also acts as the X.509 root for *session transport certificates*: the
    short-lived client certs it issues for ephemeral session keys let the
    TLS layer demand a client certificate, while the actual security checks
    (key-report binding, measurement, platform) stay at the session layer.
    """

    def __init__(
        self,
        keypair: SigningKeyPair | None = None,
        entropy: Entropy = DEFAULT_ENTROPY,
    ):
        self._entropy = entropy
        self.keypair = keypair or SigningKeyPair.generate(entropy)
        self._known_platforms: set[PlatformId] = set()
        self._lock = threading.Lock()
        self._transport_root = None

    @property
    def public_key(self) -> bytes:
        return self.keypair.public

    def register_platform(self, platform: PlatformId) -> None:
        with self._lock:
            self._known_platforms.add(platform)

    def knows(self, platform: PlatformId) -> bool:
        with self._lock:
            return platform in self._known_platforms

    def issue_report(
        self, platform: PlatformId, mre: Measurement, bound_pubkey: bytes
    ) -> AttestationReport:
        if not self.knows(platform):
            raise AttestationError(
                "unknown-platform", f"platform {platform.hex()} is not registered"
            )
        if len(bound_pubkey) != 32:
            raise CryptoError("bound public key must be 32 bytes")
        nonce = self._entropy.random_bytes(REPORT_NONCE_LEN)
        unsigned = AttestationReport(
            platform=platform,
            mre=mre,
            bound_pubkey=bound_pubkey,
            nonce=nonce,
            signature=b"\x00" * 64,
        )
        sig = crypto.sign(self.keypair, unsigned.signed_payload())
        return AttestationReport(
            platform=platform,
            mre=mre,
            bound_pubkey=bound_pubkey,
            nonce=nonce,
            signature=sig,
        )

    def transport_root_pem(self) -> bytes:
        """Self-signed X.509 root for session transport certificates."""
        from . import certs

        with self._lock:
            if self._transport_root is None:
                self._transport_root = certs.make_ca_certificate(
                    "teeguard-qa-transport", self.keypair
                )
            return certs.cert_to_pem(self._transport_root)

    def issue_session_certificate(
        self, platform: PlatformId, mre: Measurement, bound_pubkey: bytes
    ):
        """Short-lived TLS client certificate for an ephemeral session key."""
        import datetime

        from . import certs

        if not self.knows(platform):
            raise AttestationError(
                "unknown-platform", f"platform {platform.hex()} is not registered"
            )
        return certs.issue_certificate(
            issuer_name="teeguard-qa-transport",
            issuer_key=self.keypair,
            subject_name="teeguard-session",
            subject_pubkey=bound_pubkey,
            validity=datetime.timedelta(hours=1),
            mre_hex=mre.hex(),
        )


# ---------------------------------------------------------------------------
# Platform counter
# ---------------------------------------------------------------------------


class PlatformCounter:
    """Monotonic hardware counter with a minimum spacing between increments.

    Persistence file: 8-byte big-endian value followed by a 32-byte SHA-256
    integrity digest over a domain prefix plus the value bytes. Writes go to
    a temp file renamed into place so a crash never leaves a torn value.
    Increments are linearizable (internal lock).
    """

    def __init__(
        self,
        path: Path | str,
        min_increment_interval: float = DEFAULT_MIN_INCREMENT_INTERVAL,
        clock: Clock | None = None,
    ):
        self.path = Path(path)
        self.min_increment_interval = min_increment_interval
        self.clock = clock or RealClock()
        self._lock = threading.Lock()
        self._last_increment: float | None = None
        self._value = self._load()

    def _load(self) -> int:
        if not self.path.exists():
            return 0
        raw = self.path.read_bytes()
        if len(raw) != 40:
            raise IntegrityError(f"counter file {self.path} has wrong size")
        value_bytes, digest = raw[:8], raw[8:]
        expected = crypto.hash_data(_COUNTER_DIGEST_DOMAIN + value_bytes).data
        if digest != expected:
            raise IntegrityError(f"counter file {self.path} failed integrity check")
        return int.from_bytes(value_bytes, "big")

    def _persist(self, value: int) -> None:
        value_bytes = value.to_bytes(8, "big")
        digest = crypto.hash_data(_COUNTER_DIGEST_DOMAIN + value_bytes).data
        tmp = self.path.with_suffix(".tmp")
        tmp.write_bytes(value_bytes + digest)
        os.replace(tmp, self.path)

    def read(self) -> int:
        with self._lock:
            return self._value

    def increment(self) -> int:
        """Add one, blocking as needed to keep increments spaced apart."""
        with self._lock:
            now = self.clock.now()
            if self._last_increment is not None:
                wait = self._last_increment + self.min_increment_interval - now
                if wait > 0:
                    self.clock.sleep(wait)
            self._value += 1
            self._persist(self._value)
            self._last_increment = self.clock.now()
            return self._value


# ---------------------------------------------------------------------------
# Simulated platform: identity, sealing, counters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SealedBlob:
    """Ciphertext bound to (platform, measurement); see SimulatedPlatform.seal."""

    ciphertext: bytes

    def encode(self) -> bytes:
        return self.ciphertext

    @classmethod
    def decode(cls, raw: bytes) -> "SealedBlob":
        return cls(raw)


class SimulatedPlatform:
    """One simulated host: stable identity, sealing root, monotonic counters.

    State persists under ``state_dir`` so the same host can be "restarted"
    by reopening the directory.
    """

    def __init__(self, state_dir: Path | str, entropy: Entropy = DEFAULT_ENTROPY):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        identity_path = self.state_dir / "platform.json"
        if identity_path.exists():
            data = json.loads(identity_path.read_text())
            self.platform_id = PlatformId.from_hex(data["platform_id"])
            self._sealing_root = bytes.fromhex(data["sealing_root"])
        else:
            self.platform_id = PlatformId.generate(entropy)
            self._sealing_root = entropy.random_bytes(32)
            identity_path.write_text(
                json.dumps(
                    {
                        "platform_id": self.platform_id.hex(),
                        "sealing_root": self._sealing_root.hex(),
                    }
                )
            )
        self._counters: dict[str, PlatformCounter] = {}
        self._lock = threading.Lock()

    def counter(
        self,
        name: str = "default",
        min_increment_interval: float = DEFAULT_MIN_INCREMENT_INTERVAL,
        clock: Clock | None = None,
    ) -> PlatformCounter:
        with self._lock:
            existing = self._counters.get(name)
            if existing is None:
                existing = PlatformCounter(
                    self.state_dir / f"counter-{name}.bin",
                    min_increment_interval=min_increment_interval,
                    clock=clock,
                )
                self._counters[name] = existing
            return existing

    def _sealing_key(self, mre: Measurement) -> crypto.SymmetricKey:
        info = b"teeguard-seal-v1:" + self.platform_id.data + mre.mre.data
        return crypto.derive_key(self._sealing_root, info, KeyPurpose.SEALING)

    def seal(
        self,
        mre: Measurement,
        payload: bytes,
        entropy: Entropy = DEFAULT_ENTROPY,
    ) -> SealedBlob:
        aad = self.platform_id.data + mre.mre.data
        return SealedBlob(
            crypto.seal_encrypt(self._sealing_key(mre), payload, aad, entropy)
        )

    def unseal(self, mre: Measurement, blob: SealedBlob) -> bytes:
        aad = self.platform_id.data + mre.mre.data
        return crypto.seal_decrypt(self._sealing_key(mre), blob.ciphertext, aad)
