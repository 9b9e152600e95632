"""Client runtime a (simulated) enclave application links against.

Performs the startup handshake: generate an ephemeral keypair, obtain a
report and transport certificate from the local quoting authority, verify
the service instance, attest over the secure channel, then apply the
received configuration (argv/env, volume keys, in-memory secret
injection). All file access goes through the shield, and every
close/sync pushes the current volume tag; exit pushes synchronously and
refuses to report success until the push is acknowledged.

The policy name arrives via an (unprotected) environment variable, as is
conventional for container deployments; a wrong name can only steer the
app to a policy whose measurement check will then fail.
"""

from __future__ import annotations

import base64
import os
import tempfile
import threading
from pathlib import Path

from . import certs
from .attestation import SessionConfig, verify_instance
from .channel import SecureChannel
from .crypto import DEFAULT_ENTROPY, Entropy, KeyPurpose, SigningKeyPair, SymmetricKey
from .errors import AttestationError, NotFoundError, TeeguardError
from .tee import QuotingAuthority, SimulatedPlatform, measure
from .volume import ShieldedVolume, VolumeTag, empty_volume_tag

POLICY_ENV_VAR = "TEEGUARD_POLICY"


class TagPushError(TeeguardError):
    """The final tag push was not acknowledged."""


class ApplicationContext:
    """A running attested application session.

    Volume keys never leave this object; application code sees only the
    path-level file API plus the configured argv/env/secrets.
    """

    def __init__(self):
        self.argv: list[str] = []
        self.env: dict[str, str] = {}
        self.session_token: str = ""
        self.strict_mode = False
        self._volumes: dict[str, ShieldedVolume] = {}
        self._secrets: dict[str, str] = {}
        self._injection_files: list[str] = []
        self._channel: SecureChannel | None = None
        self._push_worker: threading.Thread | None = None
        self._push_lock = threading.Lock()
        self._push_error: Exception | None = None
        # coalesced pending pushes: volume -> event of the newest state
        self._push_cv = threading.Condition()
        self._push_pending: dict[str, str] = {}
        self._push_in_flight = False
        self._push_stop = False
        self._exited = False

    # -- startup -----------------------------------------------------------------

    @classmethod
    def startup(
        cls,
        *,
        code: bytes,
        platform: SimulatedPlatform,
        qa: QuotingAuthority,
        service_address: tuple[str, int],
        data_root: Path | str,
        policy_name: str | None = None,
        service_name: str | None = None,
        ca_root_pem: bytes | None = None,
        permitted_service_mres: set[str] | None = None,
        write_back: bool = False,
        entropy: Entropy = DEFAULT_ENTROPY,
    ) -> "ApplicationContext":
        """Attest against the service and apply the returned configuration.

        Instance trust comes either from ``ca_root_pem`` (certificate path)
        or ``permitted_service_mres`` (explicit path: fetch the raw report,
        check it, and pin the channel key to it). Any refusal surfaces here,
        before application code runs.
        """
        policy = policy_name or os.environ.get(POLICY_ENV_VAR, "")
        if not policy:
            raise AttestationError(
                "unknown-policy", f"no policy name given (set {POLICY_ENV_VAR})"
            )
        data_root = Path(data_root)
        data_root.mkdir(parents=True, exist_ok=True)

        mre = measure(code)
        ephemeral = SigningKeyPair.generate(entropy)
        report = qa.issue_report(platform.platform_id, mre, ephemeral.public)
        session_cert = qa.issue_session_certificate(
            platform.platform_id, mre, ephemeral.public
        )
        fd, identity_path = tempfile.mkstemp(prefix="session-id-", suffix=".pem")
        os.close(fd)
        Path(identity_path).write_bytes(
            certs.cert_to_pem(session_cert) + certs.key_to_pem(ephemeral)
        )

        host, port = service_address
        channel = SecureChannel(
            host,
            port,
            client_identity=identity_path,
            server_ca_pem=ca_root_pem,
        )
        try:
            channel.connect()
            server_cert = channel.server_certificate()
            if ca_root_pem is None:
                # explicit attestation: verify the served report and pin the
                # channel to the key it names
                if permitted_service_mres is None:
                    raise AttestationError(
                        "bad-signature", "no instance trust configured"
                    )
                status, raw = channel.request("GET", "/report")
                if status != 200:
                    raise AttestationError("bad-signature", "report endpoint refused")
                from .tee import AttestationReport

                served = AttestationReport.decode(raw)
                ok, reason = verify_instance(
                    served,
                    qa_public=qa.public_key,
                    permitted_mres=permitted_service_mres,
                )
                if not ok:
                    raise AttestationError(reason, "instance verification failed")
                if certs.pubkey_from_cert(server_cert) != served.bound_pubkey:
                    raise AttestationError(
                        "pubkey-mismatch",
                        "TLS server key is not the attested instance key",
                    )

            presented = cls._presented_tags(data_root)
            request = {
                "policy": policy,
                "report": base64.b64encode(report.encode()).decode(),
                "volumes": {name: tag.hex() for name, tag in presented.items()},
            }
            if service_name:
                request["service"] = service_name
            status, body = channel.request_json("POST", "/session", request)
            if status != 200:
                code_str = body.get("error", "bad-signature")
                raise AttestationError(
                    code_str, body.get("detail", f"session refused ({status})")
                )
            config = SessionConfig.from_dict(body["config"])

            ctx = cls()
            ctx._channel = channel
            ctx.session_token = body["session"]
            ctx.strict_mode = config.strict_mode
            ctx._apply_config(config, data_root, write_back, entropy)
            ctx._start_push_worker()
            return ctx
        except BaseException:
            channel.close()
            raise
        finally:
            Path(identity_path).unlink(missing_ok=True)

    @staticmethod
    def _presented_tags(data_root: Path) -> dict[str, VolumeTag]:
        """One presented tag per volume directory; absent manifest = empty."""
        tags: dict[str, VolumeTag] = {}
        for entry in sorted(data_root.iterdir()):
            if entry.is_dir():
                tags[entry.name] = ShieldedVolume.peek_tag(entry)
        return tags

    def _apply_config(
        self,
        config: SessionConfig,
        data_root: Path,
        write_back: bool,
        entropy: Entropy,
    ) -> None:
        self.argv = list(config.argv)
        self.env = dict(config.env)
        self._secrets = dict(config.secrets)
        self._injection_files = list(config.injection_files)
        for name, key_hex in config.fs_keys.items():
            key = SymmetricKey(bytes.fromhex(key_hex), KeyPurpose.FS_ENCRYPTION)
            root = data_root / name
            expected = VolumeTag.from_hex(config.fs_tags[name])
            try:
                volume = ShieldedVolume.open(
                    root,
                    key,
                    expected_tag=expected,
                    write_back=write_back,
                    entropy=entropy,
                )
            except NotFoundError:
                if expected != empty_volume_tag():
                    raise FileNotFoundError(
                        f"volume {name!r} is expected to exist with tag {expected.hex()[:16]}…"
                    )
                volume = ShieldedVolume.create(
                    root, key, write_back=write_back, entropy=entropy
                )
            self._volumes[name] = volume
        for entry in self._injection_files:
            volume_name, _, path = entry.partition(":")
            if volume_name in self._volumes and path:
                try:
                    self._volumes[volume_name].inject(path, self._secrets)
                except NotFoundError:
                    pass  # template not shipped yet; injected when written

    # -- tag pushes ----------------------------------------------------------------

    def _start_push_worker(self) -> None:
        self._push_worker = threading.Thread(target=self._push_loop, daemon=True)
        self._push_worker.start()

    def _push_loop(self) -> None:
        # pushes coalesce per volume: only the newest state matters, so a
        # burst of closes costs one network round trip once drained
        while True:
            with self._push_cv:
                self._push_cv.wait_for(lambda: self._push_pending or self._push_stop)
                if self._push_stop and not self._push_pending:
                    return
                batch = dict(self._push_pending)
                self._push_pending.clear()
                self._push_in_flight = True
            for volume, event in sorted(batch.items()):
                try:
                    self._send_push(volume, self._volumes[volume].tag.hex(), event)
                except Exception as e:
                    self._push_error = e
            with self._push_cv:
                self._push_in_flight = False
                self._push_cv.notify_all()

    def _send_push(self, volume: str, tag_hex: str, event: str) -> int:
        assert self._channel is not None
        with self._push_lock:
            status, body = self._channel.request_json(
                "POST",
                "/tags",
                {
                    "session": self.session_token,
                    "volume": volume,
                    "tag": tag_hex,
                    "event": event,
                },
            )
        if status != 200:
            raise TagPushError(f"tag push refused: {body}")
        return int(body.get("sequence", 0))

    def _enqueue_push(self, volume: str, event: str) -> None:
        with self._push_cv:
            self._push_pending[volume] = event
            self._push_cv.notify_all()

    def flush_pushes(self, timeout: float = 5.0) -> None:
        """Block until every pending push has been sent (or timeout)."""
        with self._push_cv:
            self._push_cv.wait_for(
                lambda: not self._push_pending and not self._push_in_flight,
                timeout=timeout,
            )

    # -- application file API ---------------------------------------------------

    def volumes(self) -> list[str]:
        return sorted(self._volumes)

    def read_file(self, volume: str, path: str) -> bytes:
        return self._volumes[volume].read_file(path)

    def write_file(self, volume: str, path: str, data: bytes) -> None:
        """Open-write-close; the close pushes the new tag."""
        self._volumes[volume].write_file(path, data)
        if f"{volume}:{path}" in self._injection_files:
            self._volumes[volume].inject(path, self._secrets)
        self._enqueue_push(volume, "close")

    def file_counter_increment(self, volume: str, path: str) -> int:
        value = self._volumes[volume].file_counter_increment(path)
        self._enqueue_push(volume, "close")
        return value

    def sync(self, volume: str) -> None:
        self._volumes[volume].sync()
        self._enqueue_push(volume, "sync")

    def exit(self) -> None:
        """Push every volume's final tag with event=exit and wait for acks.

        In strict mode an unacknowledged exit push is a hard failure: the
        next restart would be refused, so the process must not report
        success.
        """
        if self._exited:
            return
        self._exited = True
        with self._push_cv:
            self._push_stop = True
            self._push_cv.notify_all()
        if self._push_worker is not None:
            self._push_worker.join(timeout=10)
        failures = []
        for name, volume in sorted(self._volumes.items()):
            volume.close()
            try:
                self._send_push(name, volume.tag.hex(), "exit")
            except Exception as e:
                failures.append((name, e))
        if self._channel is not None:
            self._channel.close()
        if failures:
            raise TagPushError(
                "; ".join(f"volume {n!r}: {e}" for n, e in failures)
            )

    def abort(self) -> None:
        """Crash simulation: close the channel with no exit pushes."""
        self._exited = True
        with self._push_cv:
            self._push_stop = True
            self._push_cv.notify_all()
        for volume in self._volumes.values():
            volume.sync()
        if self._channel is not None:
            self._channel.close()


# ---------------------------------------------------------------------------
# Demo applications
# ---------------------------------------------------------------------------

COUNTER_APP_CODE = b"demo: shielded counter loop v1"
ML_APP_CODE = b"demo: inference engine v1"


def run_counter_app(ctx: ApplicationContext, volume: str, increments: int) -> int:
    """Increment a shielded file counter ``increments`` times; clean exit."""
    last = 0
    for _ in range(increments):
        last = ctx.file_counter_increment(volume, "executions")
    ctx.exit()
    return last


def run_inference_app(
    ctx: ApplicationContext, model_volume: str, io_volume: str
) -> bytes:
    """Read an encrypted model and input, write an encrypted output.

    Mirrors the managed ML flow: the engine sees plaintext only inside the
    shield; the produced output lands encrypted under the output volume key.
    """
    model = ctx.read_file(model_volume, "model.bin")
    image = ctx.read_file(io_volume, "input.bin")
    # stand-in for real inference: a keyed digest of model and input
    from . import crypto

    result = crypto.hash_data(b"inference:" + model + image).data
    ctx.write_file(io_volume, "output.bin", result)
    ctx.exit()
    return result
