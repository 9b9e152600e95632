"""Single-machine deployment assembly.

Bundles the simulated platform, the quoting authority, the service CA, and
a client CA under one directory so the CLI, the test harness, and the demo
scripts can stand up a complete installation with two calls. The key files
in the deployment directory model out-of-band provisioning (the things an
operator would install on a real host) and sit inside the simulation's
trust boundary.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass
from pathlib import Path

from . import certs
from .attestation import CaState
from .crypto import DEFAULT_ENTROPY, Entropy, SigningKeyPair
from .errors import NotFoundError
from .server import SERVICE_CODE, ServiceInstance, ServiceSettings
from .tee import QuotingAuthority, SimulatedPlatform, measure


@dataclass
class Deployment:
    root: Path
    platform: SimulatedPlatform
    qa: QuotingAuthority
    ca: CaState
    client_ca_key: SigningKeyPair
    client_ca_cert: "certs.x509.Certificate"

    @classmethod
    def init(
        cls,
        root: Path | str,
        *,
        permitted_service_mres: set[str] | None = None,
        entropy: Entropy = DEFAULT_ENTROPY,
    ) -> "Deployment":
        root = Path(root)
        if (root / "deployment.json").exists():
            raise FileExistsError(f"deployment already initialized at {root}")
        root.mkdir(parents=True, exist_ok=True)
        platform = SimulatedPlatform(root / "platform", entropy=entropy)
        qa = QuotingAuthority(entropy=entropy)
        qa.register_platform(platform.platform_id)
        permitted = permitted_service_mres or {measure(SERVICE_CODE).hex()}
        ca = CaState.create(qa.public_key, permitted, entropy=entropy)
        client_ca_key = SigningKeyPair.generate(entropy)
        client_ca_cert = certs.make_ca_certificate("teeguard-client-ca", client_ca_key)

        (root / "qa.key").write_text(qa.keypair.private_bytes().hex())
        (root / "ca.key").write_text(ca.root.private_bytes().hex())
        (root / "ca-root.pem").write_bytes(certs.cert_to_pem(ca.root_cert))
        (root / "client-ca.key").write_text(client_ca_key.private_bytes().hex())
        (root / "client-ca.pem").write_bytes(certs.cert_to_pem(client_ca_cert))
        (root / "deployment.json").write_text(
            json.dumps({"permitted_service_mres": sorted(permitted)}, indent=2)
        )
        deployment = cls(
            root=root,
            platform=platform,
            qa=qa,
            ca=ca,
            client_ca_key=client_ca_key,
            client_ca_cert=client_ca_cert,
        )
        deployment.issue_client_identity("operator")
        return deployment

    @classmethod
    def load(cls, root: Path | str, entropy: Entropy = DEFAULT_ENTROPY) -> "Deployment":
        root = Path(root)
        meta_path = root / "deployment.json"
        if not meta_path.exists():
            raise NotFoundError(f"no deployment at {root} (run init first)")
        meta = json.loads(meta_path.read_text())
        platform = SimulatedPlatform(root / "platform", entropy=entropy)
        qa = QuotingAuthority(
            SigningKeyPair.from_private_bytes(
                bytes.fromhex((root / "qa.key").read_text().strip())
            ),
            entropy=entropy,
        )
        qa.register_platform(platform.platform_id)
        ca = CaState(
            root=SigningKeyPair.from_private_bytes(
                bytes.fromhex((root / "ca.key").read_text().strip())
            ),
            root_cert=certs.load_pem_certificate((root / "ca-root.pem").read_bytes()),
            qa_public=qa.public_key,
            permitted_mres=frozenset(meta["permitted_service_mres"]),
        )
        client_ca_key = SigningKeyPair.from_private_bytes(
            bytes.fromhex((root / "client-ca.key").read_text().strip())
        )
        client_ca_cert = certs.load_pem_certificate((root / "client-ca.pem").read_bytes())
        return cls(
            root=root,
            platform=platform,
            qa=qa,
            ca=ca,
            client_ca_key=client_ca_key,
            client_ca_cert=client_ca_cert,
        )

    # -- identities -------------------------------------------------------------

    def issue_client_identity(self, name: str) -> Path:
        """Client certificate + key bundle for a policy owner."""
        key = SigningKeyPair.generate()
        cert = certs.issue_certificate(
            issuer_name="teeguard-client-ca",
            issuer_key=self.client_ca_key,
            subject_name=name,
            subject_pubkey=key.public,
            validity=datetime.timedelta(days=30),
        )
        return certs.write_identity(self.root / f"{name}.pem", cert, key)

    def client_identity(self, name: str = "operator") -> Path:
        path = self.root / f"{name}.pem"
        if not path.exists():
            return self.issue_client_identity(name)
        return path

    def ca_root_pem(self) -> bytes:
        return certs.cert_to_pem(self.ca.root_cert)

    def client_ca_pem(self) -> bytes:
        return certs.cert_to_pem(self.client_ca_cert)

    # -- service -----------------------------------------------------------------

    def make_service(
        self,
        data_dir: Path | str | None = None,
        **settings_overrides,
    ) -> ServiceInstance:
        settings = ServiceSettings(
            data_dir=Path(data_dir) if data_dir else self.root / "service-data",
            **settings_overrides,
        )
        return ServiceInstance(
            settings,
            self.platform,
            self.qa,
            self.ca,
            client_ca_pems=[self.client_ca_pem()],
        )

    def write_address(self, instance: ServiceInstance) -> None:
        host, port = instance.address
        (self.root / "service.address").write_text(f"{host}:{port}")

    def read_address(self) -> tuple[str, int]:
        raw = (self.root / "service.address").read_text().strip()
        host, port = raw.rsplit(":", 1)
        return host, int(port)
