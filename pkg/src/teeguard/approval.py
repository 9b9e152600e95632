"""Approval service: one policy-board member as a standalone daemon.

Receives change digests over the secure channel, runs a pluggable decision
rule, and answers with a vote signed by the member key, bound to
(policy, digest, nonce). A bounded nonce cache refuses replays.
"""

from __future__ import annotations

import base64
import json
import re
import ssl
import tempfile
import threading
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import certs
from .crypto import DEFAULT_ENTROPY, Entropy, SigningKeyPair
from .policy import sign_vote

_HEX_RE = re.compile(r"^[0-9a-fA-F]+$")


# ---------------------------------------------------------------------------
# Decision rules
# ---------------------------------------------------------------------------


class DecisionRule:
    """Decides approve/reject for a change. Subclass to plug in anything
    from static lists to human-in-the-loop or code-analysis backends."""

    def decide(self, policy_name: str, change_digest: str) -> str:
        raise NotImplementedError


class AllowAllRule(DecisionRule):
    def decide(self, policy_name, change_digest):
        return "approve"


class DenyAllRule(DecisionRule):
    def decide(self, policy_name, change_digest):
        return "reject"


class StaticListRule(DecisionRule):
    """Approve policies on the allow list, reject those on the deny list;
    default applies otherwise."""

    def __init__(self, allow=(), deny=(), default="reject"):
        self.allow, self.deny, self.default = set(allow), set(deny), default

    def decide(self, policy_name, change_digest):
        if policy_name in self.deny:
            return "reject"
        if policy_name in self.allow:
            return "approve"
        return self.default


class DigestAllowListRule(DecisionRule):
    """Approve only pre-vetted change digests (hex)."""

    def __init__(self, digests=()):
        self.digests = {d.lower() for d in digests}

    def decide(self, policy_name, change_digest):
        return "approve" if change_digest.lower() in self.digests else "reject"


class InteractiveRule(DecisionRule):
    """Prompt on stdin; for operating a board seat by hand."""

    def decide(self, policy_name, change_digest):
        answer = input(f"approve change {change_digest[:16]}… to {policy_name!r}? [y/N] ")
        return "approve" if answer.strip().lower() in ("y", "yes") else "reject"


def rule_from_spec(spec: dict) -> DecisionRule:
    kind = spec.get("type", "deny-all")
    if kind == "allow-all":
        return AllowAllRule()
    if kind == "deny-all":
        return DenyAllRule()
    if kind == "static-list":
        return StaticListRule(
            allow=spec.get("allow", ()),
            deny=spec.get("deny", ()),
            default=spec.get("default", "reject"),
        )
    if kind == "digest-allow-list":
        return DigestAllowListRule(spec.get("digests", ()))
    if kind == "interactive":
        return InteractiveRule()
    raise ValueError(f"unknown rule type {kind!r}")


class NonceCache:
    """Bounded LRU of seen nonces; thread-safe."""

    def __init__(self, maxsize: int = 4096):
        self._seen: OrderedDict[str, None] = OrderedDict()
        self._maxsize = maxsize
        self._lock = threading.Lock()

    def check_and_add(self, nonce: str) -> bool:
        """True if fresh (and records it), False on replay."""
        with self._lock:
            if nonce in self._seen:
                self._seen.move_to_end(nonce)
                return False
            self._seen[nonce] = None
            if len(self._seen) > self._maxsize:
                self._seen.popitem(last=False)
            return True


# ---------------------------------------------------------------------------
# Daemon
# ---------------------------------------------------------------------------


class _ApprovalHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    server_version = "teeguard-approval"

    def log_message(self, *args):  # quiet test output
        pass

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        if self.path != "/approve":
            self._reply(404, {"error": "not-found"})
            return
        service: ApprovalService = self.server.approval_service
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length))
            policy = body["policy"]
            digest = body["digest"]
            nonce = body["nonce"]
            if not (_HEX_RE.match(digest) and _HEX_RE.match(nonce)):
                raise ValueError("digest and nonce must be hex")
            digest_bytes, nonce_bytes = bytes.fromhex(digest), bytes.fromhex(nonce)
            if len(digest_bytes) != 32 or len(nonce_bytes) != 16:
                raise ValueError("bad digest or nonce length")
        except Exception as e:
            # malformed request: no vote
            self._reply(400, {"error": f"malformed request: {e}"})
            return
        if not service.nonces.check_and_add(nonce):
            self._reply(409, {"error": "nonce replay refused"})
            return
        if service.decision_delay > 0:
            import time

            time.sleep(service.decision_delay)
        verdict = service.rule.decide(policy, digest)
        signature = sign_vote(service.member_key, policy, digest_bytes, nonce_bytes, verdict)
        self._reply(
            200,
            {
                "member": service.member_certificate,
                "verdict": verdict,
                "signature": base64.b64encode(signature).decode(),
            },
        )


class _ApprovalHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def handle_error(self, request, client_address):  # failed handshakes are expected
        pass


class ApprovalService:
    """One board member's approval daemon.

    TLS by default (member-key identity); ``require_client_ca_pem`` turns on
    mutual authentication. ``tls=False`` exists for the benchmark's
    plain-HTTP comparison only.
    """

    def __init__(
        self,
        member_key: SigningKeyPair,
        rule: DecisionRule,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        tls: bool = True,
        require_client_ca_pem: bytes | None = None,
        decision_delay: float = 0.0,
        entropy: Entropy = DEFAULT_ENTROPY,
    ):
        self.member_key = member_key
        self.member_certificate = member_key.public.hex()
        self.rule = rule
        self.nonces = NonceCache()
        self.decision_delay = decision_delay
        self._httpd = _ApprovalHTTPServer((host, port), _ApprovalHandler)
        self._httpd.approval_service = self
        self._thread: threading.Thread | None = None
        self._identity_file: Path | None = None
        if tls:
            cert = certs.make_ca_certificate("teeguard-approval-member", member_key)
            fd, name = tempfile.mkstemp(prefix="approval-id-", suffix=".pem")
            Path(name).write_bytes(certs.cert_to_pem(cert) + certs.key_to_pem(member_key))
            import os

            os.close(fd)
            self._identity_file = Path(name)
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            context.minimum_version = ssl.TLSVersion.TLSv1_3
            context.load_cert_chain(str(self._identity_file))
            if require_client_ca_pem is not None:
                context.load_verify_locations(cadata=require_client_ca_pem.decode())
                context.verify_mode = ssl.CERT_REQUIRED
            self._httpd.socket = context.wrap_socket(
                self._httpd.socket, server_side=True, do_handshake_on_connect=False
            )
        self.tls = tls

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        scheme = "https" if self.tls else "http"
        return f"{scheme}://{host}:{port}"

    def start(self) -> "ApprovalService":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        if self._identity_file and self._identity_file.exists():
            self._identity_file.unlink()

    @classmethod
    def from_config(cls, config: dict, entropy: Entropy = DEFAULT_ENTROPY) -> "ApprovalService":
        """Build from a config mapping: member_key (hex or path to hex file),
        rule spec, host/port, tls, client_ca (path)."""
        key_spec = config["member_key"]
        if isinstance(key_spec, str) and Path(key_spec).exists():
            key_hex = Path(key_spec).read_text().strip()
        else:
            key_hex = key_spec
        member_key = SigningKeyPair.from_private_bytes(bytes.fromhex(key_hex))
        client_ca = None
        if config.get("client_ca"):
            client_ca = Path(config["client_ca"]).read_bytes()
        return cls(
            member_key,
            rule_from_spec(config.get("rule", {"type": "deny-all"})),
            host=config.get("host", "127.0.0.1"),
            port=int(config.get("port", 0)),
            tls=bool(config.get("tls", True)),
            require_client_ca_pem=client_ca,
            decision_delay=float(config.get("decision_delay", 0.0)),
            entropy=entropy,
        )
