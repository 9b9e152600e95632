"""The network face of the service.

One mutually-authenticated TLS 1.3 listener exposes session attestation,
policy CRUD, tag pushes, the raw self-attestation report, and health. The
instance admits itself through the rollback guard before serving, seals its
identity and database keys to (platform, own measurement), obtains its TLS
certificate from the CA, and commits its database version on drain at
shutdown.

Behavior that affects confidentiality, integrity, or freshness takes no
configuration: the settings cover only addresses, directories, timeouts,
and clocking.
"""

from __future__ import annotations

import base64
import json
import re
import ssl
import threading
import urllib.parse
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import certs, crypto, rollback
from .attestation import (
    CaState,
    InstanceCertificate,
    attest_session,
    ca_attest_and_issue,
    instance_self_attest,
)
from .channel import SecureChannel
from .crypto import DEFAULT_ENTROPY, Entropy, KeyPurpose, SigningKeyPair, SymmetricKey
from .errors import (
    AttestationError,
    AuthorizationError,
    ConfigurationError,
    FreshnessViolation,
    GovernanceError,
    NotFoundError,
    PolicySyntaxError,
    RestartGateError,
    TeeguardError,
)
from .policy import ApprovalRequest, PolicyBoard, PolicyRegistry, Vote, verify_vote
from .store import EncryptedStore
from .tagstore import SessionManager, TagStore
from .tee import Clock, Measurement, QuotingAuthority, SimulatedPlatform, measure

SERVICE_CODE = b"teeguard-service-build-v1"

EXIT_OK = 0
EXIT_VERSION_MISMATCH = 2
EXIT_CONCURRENT_INSTANCE = 3

_POLICY_PATH = re.compile(r"^/policy/([A-Za-z0-9_.-]+)$")
_POLICY_SECRETS_PATH = re.compile(r"^/policy/([A-Za-z0-9_.-]+)/secrets$")
_CHANGE_PATH = re.compile(r"^/change/([0-9a-f]{32})$")


@dataclass
class ServiceSettings:
    """Deployment knobs; nothing here weakens the security contract."""

    data_dir: Path
    host: str = "127.0.0.1"
    port: int = 0
    approval_timeout: float = 10.0
    counter_interval: float = 0.050
    counter_clock: Clock | None = None  # None = real time
    drain_timeout: float = 10.0


def network_approval_collector(
    identity_path: Path | str | None,
    timeout: float,
):
    """Collector that POSTs the change digest to every member's approval
    service in parallel and returns the signature-verified votes."""

    def collect(board: PolicyBoard, request: ApprovalRequest) -> list[Vote]:
        votes: list[Vote] = []
        lock = threading.Lock()

        def ask(member):
            parsed = urllib.parse.urlsplit(member.approval_url)
            if not parsed.hostname:
                return
            channel = SecureChannel(
                parsed.hostname,
                parsed.port or (443 if parsed.scheme == "https" else 80),
                client_identity=identity_path,
                tls=parsed.scheme == "https",
                timeout=timeout,
            )
            try:
                status, body = channel.request_json(
                    "POST",
                    "/approve",
                    {
                        "policy": request.policy_name,
                        "digest": request.change_digest.hex(),
                        "nonce": request.nonce.hex(),
                    },
                )
                if status != 200:
                    return
                verdict = body.get("verdict", "")
                signature = base64.b64decode(body.get("signature", ""))
                if verdict in ("approve", "reject") and verify_vote(
                    member.certificate,
                    request.policy_name,
                    request.change_digest,
                    request.nonce,
                    verdict,
                    signature,
                ):
                    with lock:
                        votes.append(Vote(member=member.certificate, verdict=verdict))
            except Exception:
                pass  # non-response counts as absent
            finally:
                channel.close()

        threads = [
            threading.Thread(target=ask, args=(m,), daemon=True)
            for m in board.members
            if m.approval_url
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout + 1.0)
        return votes

    return collect


# ---------------------------------------------------------------------------
# HTTP plumbing
# ---------------------------------------------------------------------------


class _ServiceHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    instance: "ServiceInstance"

    def handle_error(self, request, client_address):  # refused handshakes are normal
        pass


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    server_version = "teeguard"

    def log_message(self, *args):
        pass

    # -- helpers -------------------------------------------------------------

    @property
    def instance(self) -> "ServiceInstance":
        return self.server.instance

    def _peer_cert(self):
        der = self.connection.getpeercert(binary_form=True)
        if der is None:
            raise AuthorizationError("client certificate required")
        from cryptography import x509

        return x509.load_der_x509_certificate(der)

    def _json_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"request body is not valid JSON: {e}") from e

    def _reply_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _reply_bytes(self, status: int, data: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        instance = self.instance
        instance._inflight_enter()
        try:
            if instance.running_token is None:
                self._reply_json(503, {"error": "service-not-admitted"})
                return
            try:
                self._route(method)
            except (NotFoundError, AuthorizationError):
                # uniform response: existence is not leaked to strangers
                self._reply_json(404, {"error": "not-found-or-unauthorized"})
            except AttestationError as e:
                self._reply_json(403, {"error": e.code, "detail": str(e)})
            except FreshnessViolation as e:
                self._reply_json(409, {"error": "tag-mismatch", "detail": str(e)})
            except RestartGateError as e:
                self._reply_json(409, {"error": "restart-gate", "detail": str(e)})
            except GovernanceError as e:
                self._reply_json(403, {"error": "governance", "detail": str(e)})
            except (ConfigurationError, PolicySyntaxError, ValueError) as e:
                self._reply_json(400, {"error": "bad-request", "detail": str(e)})
            except TeeguardError as e:
                self._reply_json(500, {"error": "internal", "detail": str(e)})
        finally:
            instance._inflight_exit()

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_DELETE(self):
        self._dispatch("DELETE")

    # -- routing ---------------------------------------------------------------

    def _route(self, method: str) -> None:
        instance = self.instance
        path = self.path.split("?", 1)[0]

        if method == "GET" and path == "/health":
            self._reply_json(200, {"status": "ok", "store_version": instance.store.version})
            return
        if method == "GET" and path == "/report":
            self._reply_bytes(200, instance.report.encode())
            return
        if method == "POST" and path == "/session":
            self._handle_session()
            return
        if method == "POST" and path == "/tags":
            self._handle_tag_push()
            return

        m = _POLICY_SECRETS_PATH.match(path)
        if m and method == "GET":
            fp = certs.fingerprint(self._peer_cert())
            state = instance.registry.read_secrets(m.group(1), fp)
            state.requester = fp
            self._reply_json(202, {"change": state.change_id, "status": state.status})
            return

        m = _POLICY_PATH.match(path)
        if m:
            name = m.group(1)
            fp = certs.fingerprint(self._peer_cert())
            if method == "POST":
                body = self._json_body()
                state = instance.registry.create(name, body.get("text", ""), fp)
                state.requester = fp
                self._reply_json(202, {"change": state.change_id, "status": state.status})
            elif method == "GET":
                self._reply_json(200, instance.registry.read(name, fp))
            elif method == "PUT":
                body = self._json_body()
                state = instance.registry.update(name, body.get("text", ""), fp)
                state.requester = fp
                self._reply_json(202, {"change": state.change_id, "status": state.status})
            elif method == "DELETE":
                state = instance.registry.delete(name, fp)
                state.requester = fp
                self._reply_json(202, {"change": state.change_id, "status": state.status})
            else:
                self._reply_json(405, {"error": "method-not-allowed"})
            return

        m = _CHANGE_PATH.match(path)
        if m and method == "GET":
            fp = certs.fingerprint(self._peer_cert())
            state = instance.registry.change_status(m.group(1))
            if getattr(state, "requester", None) != fp:
                raise AuthorizationError("change belongs to another certificate")
            payload = {
                "change": state.change_id,
                "status": state.status,
                "action": state.action,
                "reason": state.reason,
            }
            if state.status == "approved" and state.result is not None:
                payload["result"] = state.result
            self._reply_json(200, payload)
            return

        self._reply_json(404, {"error": "not-found-or-unauthorized"})

    def _handle_session(self) -> None:
        instance = self.instance
        body = self._json_body()
        try:
            report_wire = base64.b64decode(body["report"])
        except Exception as e:
            raise ConfigurationError(f"bad report encoding: {e}") from e
        from .tee import AttestationReport

        report = AttestationReport.decode(report_wire)
        peer = self._peer_cert()
        presented = dict(body.get("volumes", {}))
        with instance.session_lock:
            config, svc, mounts = attest_session(
                report=report,
                policy_name=body.get("policy", ""),
                tls_client_pubkey=certs.pubkey_from_cert(peer),
                qa_public=instance.qa.public_key,
                registry=instance.registry,
                tag_store=instance.tags,
                presented_tags=presented,
                service_name=body.get("service"),
            )
            session = instance.sessions.register(
                body.get("policy", ""), svc.name, mounts
            )
        instance.store.commit_audit(
            "session_attested",
            policy=body.get("policy", ""),
            service=svc.name,
            mre=report.mre.hex(),
            platform=report.platform.hex(),
        )
        self._reply_json(200, {"session": session.token, "config": config.to_dict()})

    def _handle_tag_push(self) -> None:
        instance = self.instance
        body = self._json_body()
        sequence = instance.tags.push_tag(
            body.get("session", ""),
            body.get("volume", ""),
            body.get("tag", ""),
            body.get("event", ""),
        )
        self._reply_json(200, {"sequence": sequence})


# ---------------------------------------------------------------------------
# Service instance
# ---------------------------------------------------------------------------


@dataclass
class _SealedIdentity:
    identity: SigningKeyPair
    db_key: SymmetricKey


class ServiceInstance:
    """One service process: sealed identity, guarded store, TLS endpoints."""

    def __init__(
        self,
        settings: ServiceSettings,
        platform: SimulatedPlatform,
        qa: QuotingAuthority,
        ca: CaState,
        *,
        client_ca_pems: list[bytes] | None = None,
        service_code: bytes = SERVICE_CODE,
        entropy: Entropy = DEFAULT_ENTROPY,
    ):
        self.settings = settings
        self.platform = platform
        self.qa = qa
        self.ca = ca
        self.entropy = entropy
        self.service_code = service_code
        self.measurement: Measurement = measure(service_code)
        self.client_ca_pems = list(client_ca_pems or [])
        self.running_token: rollback.RunningToken | None = None
        self.session_lock = threading.Lock()
        self._httpd: _ServiceHTTPServer | None = None
        self._http_thread: threading.Thread | None = None
        self._inflight = 0
        self._inflight_cv = threading.Condition()
        self._stopped = False

        self.settings.data_dir.mkdir(parents=True, exist_ok=True)
        keys = self._load_or_create_identity()
        self.identity = keys.identity
        self.store = EncryptedStore(
            self.settings.data_dir / "store.bin", keys.db_key, entropy=entropy
        )
        self.counter = platform.counter(
            "service",
            min_increment_interval=settings.counter_interval,
            clock=settings.counter_clock,
        )
        self.sessions = SessionManager()
        self.tags = TagStore(self.store, self.sessions)
        self.registry = PolicyRegistry(self.store, entropy=entropy)
        self.registry.on_policy_mutated = lambda name, action: (
            self.sessions.invalidate_policy(name)
        )
        self.report = instance_self_attest(
            self.identity, qa, platform.platform_id, self.measurement
        )
        self.instance_cert: InstanceCertificate = ca_attest_and_issue(
            ca, self.report, dns_names=(settings.host, "localhost")
        )

    # -- identity sealing -----------------------------------------------------

    def _load_or_create_identity(self) -> _SealedIdentity:
        from .tee import SealedBlob

        sealed_path = self.settings.data_dir / "sealed-identity.bin"
        if sealed_path.exists():
            payload = self.platform.unseal(
                self.measurement, SealedBlob(sealed_path.read_bytes())
            )
            data = json.loads(payload)
            return _SealedIdentity(
                identity=SigningKeyPair.from_private_bytes(
                    bytes.fromhex(data["identity"])
                ),
                db_key=SymmetricKey(
                    bytes.fromhex(data["db_key"]), KeyPurpose.DB_ENCRYPTION
                ),
            )
        identity = SigningKeyPair.generate(self.entropy)
        db_key = SymmetricKey.generate(KeyPurpose.DB_ENCRYPTION, self.entropy)
        payload = json.dumps(
            {
                "identity": identity.private_bytes().hex(),
                "db_key": db_key.data.hex(),
            }
        ).encode()
        blob = self.platform.seal(self.measurement, payload, self.entropy)
        sealed_path.write_bytes(blob.ciphertext)
        return _SealedIdentity(identity=identity, db_key=db_key)

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> "ServiceInstance":
        """Admission then serve; raises VersionMismatch/ConcurrentInstance."""
        self.running_token = rollback.startup_guard(self.store, self.counter)
        collector = network_approval_collector(
            self._server_identity_path(), self.settings.approval_timeout
        )
        self.registry.collector = collector
        self._start_http()
        return self

    def _server_identity_path(self) -> Path:
        tls_dir = self.settings.data_dir / "tls"
        tls_dir.mkdir(exist_ok=True)
        path = tls_dir / "server-identity.pem"
        path.write_bytes(
            self.instance_cert.pem()
            + certs.cert_to_pem(self.ca.root_cert)
            + certs.key_to_pem(self.identity)
        )
        return path

    def _start_http(self) -> None:
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.minimum_version = ssl.TLSVersion.TLSv1_3
        context.load_cert_chain(str(self._server_identity_path()))
        trust = [self.qa.transport_root_pem(), *self.client_ca_pems]
        context.load_verify_locations(cadata="".join(p.decode() for p in trust))
        context.verify_mode = ssl.CERT_REQUIRED
        self._httpd = _ServiceHTTPServer(
            (self.settings.host, self.settings.port), _Handler
        )
        self._httpd.instance = self
        # handshake lazily in the per-connection handler thread so parallel
        # clients do not serialize on the accept loop
        self._httpd.socket = context.wrap_socket(
            self._httpd.socket, server_side=True, do_handshake_on_connect=False
        )
        self._http_thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._http_thread.start()

    @property
    def address(self) -> tuple[str, int]:
        assert self._httpd is not None, "service not started"
        return self._httpd.server_address[:2]

    def _inflight_enter(self) -> None:
        with self._inflight_cv:
            self._inflight += 1

    def _inflight_exit(self) -> None:
        with self._inflight_cv:
            self._inflight -= 1
            self._inflight_cv.notify_all()

    def stop(self) -> None:
        """Signal-style shutdown: stop accepting, drain, commit the version."""
        if self._stopped:
            return
        self._stopped = True
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        with self._inflight_cv:
            self._inflight_cv.wait_for(
                lambda: self._inflight == 0, timeout=self.settings.drain_timeout
            )
        if self.running_token is not None and not self.running_token.committed:
            rollback.shutdown_commit(self.store, self.counter, self.running_token)

    def abort(self) -> None:
        """Crash simulation: tear down without committing the version."""
        self._stopped = True
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
