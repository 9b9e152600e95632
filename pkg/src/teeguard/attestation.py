"""Session attestation, the service CA, and instance verification.

A session handshake verifies, in order: the report signature, the binding
between the TLS client key and the report key, the policy/measurement
match, and the platform allowance. Only when every check passes (and each
volume survives restart admission) is any configuration released.

The CA converts explicit attestation into certificate-based attestation:
it signs short-lived certificates only for service measurements baked into
its own measured configuration, so changing that set changes the CA's own
identity.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field

from cryptography import x509

from . import certs, crypto
from .crypto import DEFAULT_ENTROPY, Entropy, SigningKeyPair
from .errors import AttestationError, ConfigurationError
from .policy import (
    PolicyDocument,
    PolicyRegistry,
    ServiceSpec,
    _service_volumes,
    permitted_combinations,
    resolve_ref,
)
from .tee import AttestationReport, Measurement, PlatformId, QuotingAuthority
from .tagstore import TagStore

DEFAULT_CERT_VALIDITY = datetime.timedelta(hours=24)


# ---------------------------------------------------------------------------
# Session configuration
# ---------------------------------------------------------------------------


@dataclass
class SessionConfig:
    """Everything a service receives after successful attestation."""

    argv: list[str] = field(default_factory=list)
    env: dict[str, str] = field(default_factory=dict)
    fs_keys: dict[str, str] = field(default_factory=dict)  # volume -> key hex
    fs_tags: dict[str, str] = field(default_factory=dict)  # volume -> expected tag hex
    volume_paths: dict[str, str] = field(default_factory=dict)
    injection_files: list[str] = field(default_factory=list)
    secrets: dict[str, str] = field(default_factory=dict)
    strict_mode: bool = False

    def to_dict(self) -> dict:
        return {
            "argv": self.argv,
            "env": self.env,
            "fs_keys": self.fs_keys,
            "fs_tags": self.fs_tags,
            "volume_paths": self.volume_paths,
            "injection_files": self.injection_files,
            "secrets": self.secrets,
            "strict_mode": self.strict_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionConfig":
        return cls(
            argv=list(data.get("argv", [])),
            env=dict(data.get("env", {})),
            fs_keys=dict(data.get("fs_keys", {})),
            fs_tags=dict(data.get("fs_tags", {})),
            volume_paths=dict(data.get("volume_paths", {})),
            injection_files=list(data.get("injection_files", [])),
            secrets=dict(data.get("secrets", {})),
            strict_mode=bool(data.get("strict_mode", False)),
        )


def _resolved_service_for_mre(
    doc: PolicyDocument, namespace: dict[str, str], mre_hex: str, service_name: str | None
) -> ServiceSpec | None:
    candidates = (
        [doc.service(service_name)] if service_name else list(doc.services)
    )
    for svc in candidates:
        resolved = set()
        for entry in svc.mrenclaves:
            try:
                resolved.add(resolve_ref(entry, namespace).lower())
            except ConfigurationError:
                continue
        if mre_hex.lower() in resolved:
            return svc
    return None


def attest_session(
    *,
    report: AttestationReport,
    policy_name: str,
    tls_client_pubkey: bytes,
    qa_public: bytes,
    registry: PolicyRegistry,
    tag_store: TagStore,
    presented_tags: dict[str, str],
    service_name: str | None = None,
) -> tuple[SessionConfig, ServiceSpec, dict[str, str]]:
    """Run the admission checks and assemble the session configuration.

    Raises AttestationError with a distinct code per failed check; no
    partial configuration is ever released. Returns the config, the matched
    service, and the volume mount map for session registration.
    """
    # (0) report authenticity
    if not report.verify(qa_public):
        raise AttestationError("bad-signature", "report signature invalid")
    # (i) TLS channel key is the attested key
    if tls_client_pubkey != report.bound_pubkey:
        raise AttestationError(
            "pubkey-mismatch", "TLS client key does not match the attested key"
        )
    # (ii) policy exists and the measurement is valid for it
    try:
        doc = registry.document(policy_name)
    except Exception as e:
        raise AttestationError("unknown-policy", f"policy {policy_name!r}: {e}") from e
    namespace = registry.namespace(policy_name)
    svc = _resolved_service_for_mre(doc, namespace, report.mre.hex(), service_name)
    if svc is None:
        raise AttestationError(
            "mre-rejected",
            f"measurement {report.mre.hex()[:16]}… not permitted by policy {policy_name!r}",
        )
    # (iii) platform allowance (empty list = any platform)
    if svc.platforms:
        allowed = {resolve_ref(p, namespace).lower() for p in svc.platforms}
        if report.platform.hex().lower() not in allowed:
            raise AttestationError(
                "platform-rejected",
                f"platform {report.platform.hex()} not permitted for service {svc.name!r}",
            )

    volumes = _service_volumes(doc, svc)

    # (iv) secure-update intersection, when configured
    combo = doc.combinations
    if combo is not None and (combo.permits or combo.import_from):
        if combo.import_from:
            image_doc = registry.document(combo.import_from)
            admissible = {
                (c.mrenclave.lower(), c.fspf_tag.lower())
                for c in permitted_combinations(image_doc, doc)
            }
        else:
            admissible = {(c.mrenclave.lower(), c.fspf_tag.lower()) for c in combo.permits}
        combo_volume = combo.volume or (volumes[0][0] if volumes else None)
        if combo_volume is None or combo_volume not in presented_tags:
            raise AttestationError(
                "combination-rejected",
                f"no presented tag for combination volume {combo_volume!r}",
            )
        pair = (report.mre.hex().lower(), presented_tags[combo_volume].lower())
        if pair not in admissible:
            raise AttestationError(
                "combination-rejected",
                "(measurement, tag) pair is not in the admissible intersection",
            )

    # (v) per-volume restart admission against expected tags
    for vol_name, _path, _key_ref, tag_ref in volumes:
        declared = resolve_ref(tag_ref, namespace)
        presented = presented_tags.get(vol_name)
        if presented is None:
            raise AttestationError(
                "tag-mismatch", f"no presented tag for volume {vol_name!r}"
            )
        tag_store.admit_restart(
            policy_name,
            svc.name,
            vol_name,
            presented,
            strict=svc.strict_mode,
            declared_tag=declared,
        )

    # all checks passed: assemble configuration
    config = SessionConfig(strict_mode=svc.strict_mode)
    config.argv = [resolve_ref(a, namespace) for a in svc.command]
    config.env = {k: resolve_ref(v, namespace) for k, v in svc.env}
    mounts: dict[str, str] = {}
    for vol_name, path, key_ref, tag_ref in volumes:
        config.fs_keys[vol_name] = resolve_ref(key_ref, namespace)
        record = tag_store.expected(policy_name, svc.name, vol_name)
        config.fs_tags[vol_name] = (
            record["expected_tag"] if record else resolve_ref(tag_ref, namespace)
        )
        config.volume_paths[vol_name] = path
        mounts[vol_name] = path
    config.injection_files = list(svc.injection_files)
    missing = [s for s in svc.secrets if s not in namespace]
    if missing:
        raise ConfigurationError(
            f"service {svc.name!r} grants undefined secrets: {', '.join(missing)}",
            missing=missing,
        )
    config.secrets = {s: namespace[s] for s in svc.secrets}
    return config, svc, mounts


# ---------------------------------------------------------------------------
# Service CA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaState:
    """The service CA: signs instance certificates for known-good builds.

    ``permitted_mres`` is part of the CA's measured configuration: the CA's
    own measurement hashes over it, so the set cannot change without
    changing the CA's identity.
    """

    root: SigningKeyPair
    root_cert: x509.Certificate
    qa_public: bytes
    permitted_mres: frozenset[str]
    cert_validity: datetime.timedelta = DEFAULT_CERT_VALIDITY

    @classmethod
    def create(
        cls,
        qa_public: bytes,
        permitted_mres: set[str] | frozenset[str],
        cert_validity: datetime.timedelta = DEFAULT_CERT_VALIDITY,
        entropy: Entropy = DEFAULT_ENTROPY,
    ) -> "CaState":
        root = SigningKeyPair.generate(entropy)
        return cls(
            root=root,
            root_cert=certs.make_ca_certificate("teeguard-ca", root),
            qa_public=qa_public,
            permitted_mres=frozenset(m.lower() for m in permitted_mres),
            cert_validity=cert_validity,
        )

    def config_blob(self) -> bytes:
        return json.dumps(
            {
                "permitted_mres": sorted(self.permitted_mres),
                "validity_seconds": self.cert_validity.total_seconds(),
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode()

    def measurement(self) -> Measurement:
        from .tee import measure

        return measure(b"teeguard-ca-v1:" + self.config_blob())

    @property
    def public_key(self) -> bytes:
        return self.root.public


@dataclass(frozen=True)
class InstanceCertificate:
    """Short-lived certificate binding an instance key to its measurement."""

    cert: x509.Certificate

    @property
    def subject_pubkey(self) -> bytes:
        return certs.pubkey_from_cert(self.cert)

    @property
    def subject_mre(self) -> str | None:
        return certs.mre_from_cert(self.cert)

    @property
    def not_before(self) -> datetime.datetime:
        return self.cert.not_valid_before_utc

    @property
    def not_after(self) -> datetime.datetime:
        return self.cert.not_valid_after_utc

    def pem(self) -> bytes:
        return certs.cert_to_pem(self.cert)

    @classmethod
    def from_pem(cls, pem: bytes) -> "InstanceCertificate":
        return cls(certs.load_pem_certificate(pem))


def ca_attest_and_issue(
    ca: CaState,
    report: AttestationReport,
    *,
    dns_names: tuple[str, ...] = (),
    now: datetime.datetime | None = None,
) -> InstanceCertificate:
    """Attest an instance report and issue its certificate.

    Issued only when the report verifies and its measurement is in the
    CA's baked-in permitted set.
    """
    if not report.verify(ca.qa_public):
        raise AttestationError("bad-signature", "instance report signature invalid")
    if report.mre.hex().lower() not in ca.permitted_mres:
        raise AttestationError(
            "mre-rejected",
            f"measurement {report.mre.hex()[:16]}… is not a permitted service build",
        )
    # backdate slightly for clock skew; the window never exceeds cert_validity
    start = (now or datetime.datetime.now(datetime.timezone.utc)) - datetime.timedelta(
        minutes=5
    )
    cert = certs.issue_certificate(
        issuer_name="teeguard-ca",
        issuer_key=ca.root,
        subject_name="teeguard-instance",
        subject_pubkey=report.bound_pubkey,
        validity=ca.cert_validity,
        mre_hex=report.mre.hex(),
        dns_names=dns_names,
        not_before=start,
    )
    return InstanceCertificate(cert)


def instance_self_attest(
    instance_keys: SigningKeyPair,
    qa: QuotingAuthority,
    platform: PlatformId,
    own_measurement: Measurement,
) -> AttestationReport:
    """Bind the instance public key to the service's own measurement."""
    return qa.issue_report(platform, own_measurement, instance_keys.public)


def verify_instance(
    served: InstanceCertificate | AttestationReport,
    *,
    ca_public: bytes | None = None,
    qa_public: bytes | None = None,
    permitted_mres: frozenset[str] | set[str] | None = None,
    at: datetime.datetime | None = None,
) -> tuple[bool, str]:
    """Client-side instance verification.

    Certificate path: valid iff the CA signature verifies and the window is
    current. Explicit path: valid iff the quoting authority signed the
    report and its measurement is in the client's allow-list.
    """
    at = at or datetime.datetime.now(datetime.timezone.utc)
    if isinstance(served, InstanceCertificate):
        if ca_public is None:
            return False, "no-ca-root-configured"
        if not certs.verify_cert_signature(served.cert, ca_public):
            return False, "unknown-root"
        if at < served.not_before:
            return False, "not-yet-valid"
        if at > served.not_after:
            return False, "expired"
        return True, "certificate"
    if isinstance(served, AttestationReport):
        if qa_public is None or permitted_mres is None:
            return False, "no-explicit-trust-configured"
        if not served.verify(qa_public):
            return False, "bad-signature"
        if served.mre.hex().lower() not in {m.lower() for m in permitted_mres}:
            return False, "mre-not-permitted"
        return True, "explicit-report"
    return False, "unsupported-artifact"
