"""Operator and developer command line.

Policy commands are thin wrappers over the running service's REST
endpoints; ``serve`` runs the service itself; ``bench`` and ``run-demo``
stand up self-contained in-process environments so they work anywhere.

Exit codes: 0 ok, 1 generic error, 2 version-mismatch refusal,
3 concurrent-instance refusal, 4 attestation failure, 5 network/protocol
error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .errors import (
    AttestationError,
    ConcurrentInstance,
    TeeguardError,
    VersionMismatch,
)

EXIT_GENERIC = 1
EXIT_VERSION_MISMATCH = 2
EXIT_CONCURRENT_INSTANCE = 3
EXIT_ATTESTATION = 4
EXIT_NETWORK = 5


def _print(args, payload: dict, text: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text if text is not None else json.dumps(payload, indent=2, sort_keys=True))


def _deployment(args):
    from .deploy import Deployment

    return Deployment.load(args.deployment)


def _owner_channel(args, deployment):
    from .channel import SecureChannel

    host, port = deployment.read_address()
    return SecureChannel(
        host,
        port,
        client_identity=deployment.client_identity(args.identity),
        server_ca_pem=deployment.ca_root_pem(),
    )


def _poll_change(channel, change_id: str, timeout: float) -> dict:
    deadline = time.monotonic() + timeout
    while True:
        status, body = channel.request_json("GET", f"/change/{change_id}")
        if status != 200:
            raise TeeguardError(f"change lookup failed: {body}")
        if body["status"] != "pending" or time.monotonic() > deadline:
            return body
        time.sleep(0.1)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_init(args) -> int:
    from .deploy import Deployment

    deployment = Deployment.init(args.deployment)
    _print(
        args,
        {
            "deployment": str(deployment.root),
            "platform": deployment.platform.platform_id.hex(),
        },
        f"initialized deployment at {deployment.root}",
    )
    return 0


def cmd_serve(args) -> int:
    deployment = _deployment(args)
    try:
        service = deployment.make_service(
            data_dir=args.data_dir,
            host=args.host,
            port=args.port,
            approval_timeout=args.approval_timeout,
        )
        service.start()
    except VersionMismatch as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_VERSION_MISMATCH
    except ConcurrentInstance as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_CONCURRENT_INSTANCE
    deployment.write_address(service)
    host, port = service.address
    print(f"serving on {host}:{port} (measurement {service.measurement.hex()[:16]}…)")

    stop = {"requested": False}

    def _handle(signum, frame):
        stop["requested"] = True

    signal.signal(signal.SIGTERM, _handle)
    signal.signal(signal.SIGINT, _handle)
    try:
        while not stop["requested"]:
            time.sleep(0.2)
    finally:
        service.stop()
        print("clean shutdown: database version committed")
    return 0


def cmd_approval_serve(args) -> int:
    from .approval import ApprovalService

    config = json.loads(Path(args.config).read_text())
    service = ApprovalService.from_config(config).start()
    print(f"approval service listening on {service.url}")
    print(f"member certificate: {service.member_certificate}")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        service.stop()
    return 0


def cmd_policy(args) -> int:
    deployment = _deployment(args)
    channel = _owner_channel(args, deployment)
    try:
        if args.policy_cmd == "create":
            text = Path(args.file).read_text()
            name = args.name or __import__("yaml").safe_load(text)["name"]
            status, body = channel.request_json("POST", f"/policy/{name}", {"text": text})
            if status != 202:
                _print(args, body, f"create refused: {body}")
                return EXIT_GENERIC
            outcome = _poll_change(channel, body["change"], args.timeout)
            _print(args, outcome, f"policy {name!r}: {outcome['status']}")
            return 0 if outcome["status"] == "approved" else EXIT_GENERIC
        if args.policy_cmd == "show":
            status, body = channel.request_json("GET", f"/policy/{args.name}")
            if status != 200:
                _print(args, body, f"show refused: {body}")
                return EXIT_GENERIC
            _print(args, body, body["text"])
            return 0
        if args.policy_cmd == "update":
            text = Path(args.file).read_text()
            status, body = channel.request_json("PUT", f"/policy/{args.name}", {"text": text})
            if status != 202:
                _print(args, body, f"update refused: {body}")
                return EXIT_GENERIC
            outcome = _poll_change(channel, body["change"], args.timeout)
            _print(args, outcome, f"policy {args.name!r} update: {outcome['status']}")
            return 0 if outcome["status"] == "approved" else EXIT_GENERIC
        if args.policy_cmd == "delete":
            status, body = channel.request_json("DELETE", f"/policy/{args.name}")
            if status != 202:
                _print(args, body, f"delete refused: {body}")
                return EXIT_GENERIC
            outcome = _poll_change(channel, body["change"], args.timeout)
            _print(args, outcome, f"policy {args.name!r} delete: {outcome['status']}")
            return 0 if outcome["status"] == "approved" else EXIT_GENERIC
        if args.policy_cmd == "approve-status":
            status, body = channel.request_json("GET", f"/change/{args.change}")
            if status != 200:
                _print(args, body, f"lookup refused: {body}")
                return EXIT_GENERIC
            _print(args, body, f"change {args.change}: {body['status']}")
            return 0
        raise TeeguardError(f"unknown policy command {args.policy_cmd}")
    finally:
        channel.close()


def cmd_attest_instance(args) -> int:
    from .attestation import verify_instance
    from .tee import AttestationReport

    deployment = _deployment(args)
    channel = _owner_channel(args, deployment)
    try:
        status, raw = channel.request("GET", "/report")
        if status != 200:
            print(f"report endpoint refused ({status})", file=sys.stderr)
            return EXIT_NETWORK
        report = AttestationReport.decode(raw)
        permitted = set(args.mre) if args.mre else set(deployment.ca.permitted_mres)
        ok, reason = verify_instance(
            report, qa_public=deployment.qa.public_key, permitted_mres=permitted
        )
        from . import certs

        server_pub = certs.pubkey_from_cert(channel.server_certificate())
        bound = report.bound_pubkey == server_pub
        payload = {
            "verified": bool(ok and bound),
            "reason": reason if not ok else ("ok" if bound else "channel-key-mismatch"),
            "mre": report.mre.hex(),
            "platform": report.platform.hex(),
        }
        _print(
            args,
            payload,
            f"instance attestation: {'OK' if payload['verified'] else 'FAILED'} "
            f"({payload['reason']}), mre={report.mre.hex()[:16]}…",
        )
        return 0 if payload["verified"] else EXIT_ATTESTATION
    finally:
        channel.close()


def cmd_override(args) -> int:
    from .crypto import KeyPurpose, SymmetricKey, SigningKeyPair
    from .rollback import override_unclean_shutdown
    from .server import SERVICE_CODE
    from .store import EncryptedStore
    from .tee import SealedBlob, measure

    deployment = _deployment(args)
    data_dir = Path(args.data_dir)
    sealed = (data_dir / "sealed-identity.bin").read_bytes()
    payload = json.loads(
        deployment.platform.unseal(measure(SERVICE_CODE), SealedBlob(sealed))
    )
    store = EncryptedStore(
        data_dir / "store.bin",
        SymmetricKey(bytes.fromhex(payload["db_key"]), KeyPurpose.DB_ENCRYPTION),
    )
    counter = deployment.platform.counter("service")
    try:
        new_v = override_unclean_shutdown(store, counter, confirm=args.yes_i_accept_rollback_risk)
    except TeeguardError as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_GENERIC
    _print(
        args,
        {"version": new_v},
        f"override applied: database version re-aligned to counter value {new_v} (audited)",
    )
    return 0


def cmd_run_demo(args) -> int:
    result = _run_demo(args.demo, Path(args.workdir) if args.workdir else None)
    _print(args, result, result.pop("_text", None))
    return 0


def _run_demo(which: str, workdir: Path | None) -> dict:
    """Self-contained demo: deployment + service + app in one process."""
    import shutil

    from .deploy import Deployment
    from .runtime import (
        ApplicationContext,
        COUNTER_APP_CODE,
        ML_APP_CODE,
        run_counter_app,
        run_inference_app,
    )
    from .tee import measure
    from .volume import ShieldedVolume
    from .crypto import KeyPurpose, SymmetricKey

    base = workdir or Path(tempfile.mkdtemp(prefix="teeguard-demo-"))
    base.mkdir(parents=True, exist_ok=True)
    deployment = Deployment.init(base / "deployment")
    service = deployment.make_service(data_dir=base / "service-data")
    service.start()
    deployment.write_address(service)
    from .channel import SecureChannel

    host, port = service.address
    channel = SecureChannel(
        host,
        port,
        client_identity=deployment.client_identity(),
        server_ca_pem=deployment.ca_root_pem(),
    )
    try:
        if which == "counter":
            code = COUNTER_APP_CODE
            text = f"""
name: counter_policy
services:
  - name: counter_app
    image_name: counter_image
    command: counter --loop
    mrenclaves: ["{measure(code).hex()}"]
    strict_mode: true
images:
  - name: counter_image
    volumes:
      - name: data
        path: /data
volumes:
  - name: data
"""
            status, body = channel.request_json(
                "POST", "/policy/counter_policy", {"text": text}
            )
            assert status == 202, body
            outcome = _poll_change(channel, body["change"], 30)
            assert outcome["status"] == "approved", outcome
            app_root = base / "counter-app"
            (app_root / "data").mkdir(parents=True, exist_ok=True)
            ctx = ApplicationContext.startup(
                code=code,
                platform=deployment.platform,
                qa=deployment.qa,
                service_address=service.address,
                data_root=app_root,
                policy_name="counter_policy",
                ca_root_pem=deployment.ca_root_pem(),
                write_back=True,
            )
            final = run_counter_app(ctx, "data", 1000)
            record = service.tags.expected("counter_policy", "counter_app", "data")
            return {
                "demo": "counter",
                "final_count": final,
                "last_event": record["last_event"],
                "_text": f"counter demo: 1000 increments, final count {final}, "
                f"exit tag pushed ({record['last_event']})",
            }

        # managed inference flow: model owner and data owner share one policy
        code = ML_APP_CODE
        text = f"""
name: inference_policy
services:
  - name: inference_app
    image_name: inference_image
    command: infer --once
    mrenclaves: ["{measure(code).hex()}"]
images:
  - name: inference_image
    volumes:
      - name: model
        path: /model
      - name: io
        path: /io
volumes:
  - name: model
  - name: io
"""
        status, body = channel.request_json(
            "POST", "/policy/inference_policy", {"text": text}
        )
        assert status == 202, body
        outcome = _poll_change(channel, body["change"], 30)
        assert outcome["status"] == "approved", outcome
        status, body = channel.request_json("GET", "/policy/inference_policy/secrets")
        outcome = _poll_change(channel, body["change"], 30)
        secrets = outcome["result"]["secrets"]

        app_root = base / "inference-app"
        for vol in ("model", "io"):
            (app_root / vol).mkdir(parents=True, exist_ok=True)
        # owners provision encrypted inputs out of band with the policy keys
        model_key = SymmetricKey(
            bytes.fromhex(secrets["model_fspf_key"]), KeyPurpose.FS_ENCRYPTION
        )
        io_key = SymmetricKey(
            bytes.fromhex(secrets["io_fspf_key"]), KeyPurpose.FS_ENCRYPTION
        )
        model_vol = ShieldedVolume.create(app_root / "model", model_key)
        model_vol.write_file("model.bin", b"model-weights-v1")
        io_vol = ShieldedVolume.create(app_root / "io", io_key)
        io_vol.write_file("input.bin", b"input-image-bytes")
        # declared tags must move to the provisioned state (single-owner
        # policy: update is auto-approved)
        text_updated = text + f"""
secrets:
  - name: model_fspf_tag
    kind: explicit
    value: {model_vol.tag.hex()}
  - name: io_fspf_tag
    kind: explicit
    value: {io_vol.tag.hex()}
"""
        status, body = channel.request_json(
            "PUT", "/policy/inference_policy", {"text": text_updated}
        )
        outcome = _poll_change(channel, body["change"], 30)
        assert outcome["status"] == "approved", outcome

        ctx = ApplicationContext.startup(
            code=code,
            platform=deployment.platform,
            qa=deployment.qa,
            service_address=service.address,
            data_root=app_root,
            policy_name="inference_policy",
            ca_root_pem=deployment.ca_root_pem(),
        )
        result = run_inference_app(ctx, "model", "io")
        # owner-side decryption of the produced output
        reopened = ShieldedVolume.open(app_root / "io", io_key)
        output = reopened.read_file("output.bin")
        return {
            "demo": "ml",
            "output": output.hex(),
            "matches": output == result,
            "_text": f"inference demo: encrypted output produced and owner-decrypted "
            f"({output.hex()[:16]}…), round-trip ok={output == result}",
        }
    finally:
        channel.close()
        service.stop()
        if workdir is None:
            shutil.rmtree(base, ignore_errors=True)


def cmd_bench(args) -> int:
    result = run_bench(
        args.bench_cmd,
        duration=args.duration,
        csv_path=Path(args.csv) if args.csv else None,
    )
    if args.json:
        print(json.dumps(result["json"], indent=2, sort_keys=True))
    else:
        print(result["text"])
    return 0


def run_bench(which: str, duration: float = 1.0, csv_path: Path | None = None) -> dict:
    """Self-contained benchmark runs; returns {'json':…, 'text':…}."""
    import shutil

    from .bench import (
        AttestClient,
        bench_approval,
        bench_attestation,
        bench_counters,
    )
    from .crypto import KeyPurpose, SymmetricKey
    from .deploy import Deployment
    from .tee import PlatformCounter, measure
    from .volume import ShieldedVolume, empty_volume_tag

    base = Path(tempfile.mkdtemp(prefix="teeguard-bench-"))
    try:
        if which == "counters":
            deployment = Deployment.init(base / "deployment")
            service = deployment.make_service(data_dir=base / "service-data")
            service.start()
            code = b"bench counter app"
            text = f"""
name: bench_policy
services:
  - name: bench_app
    image_name: bench_image
    command: bench
    mrenclaves: ["{measure(code).hex()}"]
    strict_mode: true
images:
  - name: bench_image
    volumes:
      - name: data
        path: /data
volumes:
  - name: data
"""
            from .channel import SecureChannel

            host, port = service.address
            channel = SecureChannel(
                host,
                port,
                client_identity=deployment.client_identity(),
                server_ca_pem=deployment.ca_root_pem(),
            )
            status, body = channel.request_json("POST", "/policy/bench_policy", {"text": text})
            outcome = _poll_change(channel, body["change"], 30)
            assert outcome["status"] == "approved", outcome
            channel.close()
            app_root = base / "bench-app"
            (app_root / "data").mkdir(parents=True)
            from .runtime import ApplicationContext

            ctx = ApplicationContext.startup(
                code=code,
                platform=deployment.platform,
                qa=deployment.qa,
                service_address=service.address,
                data_root=app_root,
                policy_name="bench_policy",
                ca_root_pem=deployment.ca_root_pem(),
                write_back=True,
            )
            counter = PlatformCounter(base / "bench-counter.bin")  # real-time mode
            volume = ShieldedVolume.create(
                base / "bench-volume",
                SymmetricKey(b"\x42" * 32, KeyPurpose.FS_ENCRYPTION),
                write_back=True,
            )
            native = base / "native"
            native.mkdir()
            result = bench_counters(
                platform_counter=counter,
                shielded_volume=volume,
                native_dir=native,
                app_ctx=ctx,
                duration=duration,
                platform_duration=max(duration, 1.0),
            )
            ctx.exit()
            service.stop()
            if csv_path:
                csv_path.write_text(result.to_csv())
            return {
                "json": {
                    "platform_rate": result.platform_rate,
                    "file_native_rate": result.file_native_rate,
                    "file_shielded_rate": result.file_shielded_rate,
                    "file_shielded_strict_rate": result.file_shielded_strict_rate,
                },
                "text": result.summary(),
                "result": result,
            }

        if which == "attestation":
            deployment = Deployment.init(base / "deployment")
            service = deployment.make_service(data_dir=base / "service-data")
            service.start()
            code = b"bench attest app"
            text = f"""
name: attest_policy
services:
  - name: attest_app
    command: bench
    mrenclaves: ["{measure(code).hex()}"]
"""
            from .channel import SecureChannel

            host, port = service.address
            channel = SecureChannel(
                host,
                port,
                client_identity=deployment.client_identity(),
                server_ca_pem=deployment.ca_root_pem(),
            )
            status, body = channel.request_json("POST", "/policy/attest_policy", {"text": text})
            outcome = _poll_change(channel, body["change"], 30)
            assert outcome["status"] == "approved", outcome
            channel.close()

            def client(delay):
                return AttestClient(
                    platform=deployment.platform,
                    qa=deployment.qa,
                    address=service.address,
                    ca_root_pem=deployment.ca_root_pem(),
                    policy_name="attest_policy",
                    code=code,
                    presented_tags={},
                    injected_delay_s=delay,
                )

            local = bench_attestation(client(0.0), samples=20, parallelism=(1, 2, 4, 8))
            remote = bench_attestation(client(0.250), samples=10)
            service.stop()
            if csv_path:
                csv_path.write_text(local.to_csv())
            lo, hi = local.ci95_total_s()
            phases = local.phase_means_ms()
            text_out = (
                f"local attestation:   {1e3 * local.mean_total_s():8.2f} ms "
                f"(95% CI {1e3 * lo:.2f}..{1e3 * hi:.2f})\n"
                f"  phases: init {phases['init']:.2f} ms, send {phases['send']:.2f} ms, "
                f"wait {phases['wait']:.2f} ms, receive {phases['receive']:.2f} ms\n"
                f"+250ms-delay path:   {1e3 * remote.mean_total_s():8.2f} ms\n"
                + "\n".join(
                    f"  parallelism {n:2d}: {rate:7.1f} attestations/s"
                    for n, rate in sorted(local.throughput_by_parallelism.items())
                )
            )
            return {
                "json": {
                    "local_mean_ms": 1e3 * local.mean_total_s(),
                    "local_ci95_ms": [1e3 * lo, 1e3 * hi],
                    "delayed_mean_ms": 1e3 * remote.mean_total_s(),
                    "phases_ms": phases,
                    "throughput_by_parallelism": {
                        str(k): v for k, v in local.throughput_by_parallelism.items()
                    },
                },
                "text": text_out,
                "local": local,
                "remote": remote,
            }

        if which == "approval":
            from .approval import AllowAllRule, ApprovalService
            from .crypto import SigningKeyPair

            member = SigningKeyPair.generate()
            tls_service = ApprovalService(member, AllowAllRule()).start()
            plain_service = ApprovalService(member, AllowAllRule(), tls=False).start()
            tls_result = bench_approval(
                url=tls_service.url, client_identity=None, duration=duration,
                injected_rtts=(0.0, 0.05, 0.1, 0.2),
            )
            plain_result = bench_approval(
                url=plain_service.url, client_identity=None, duration=duration
            )
            tls_service.stop()
            plain_service.stop()
            if csv_path:
                csv_path.write_text(tls_result.to_csv())

            def fmt(result, label):
                lines = [f"{label}:"]
                for p in result.points:
                    lines.append(
                        f"  c={p.concurrency:3d}: {p.throughput_rps:8.1f} req/s, "
                        f"mean {1e3 * p.mean_latency_s:7.2f} ms, p95 {1e3 * p.p95_latency_s:7.2f} ms"
                    )
                return "\n".join(lines)

            rtt_lines = "\n".join(
                f"  rtt {1e3 * rtt:5.0f} ms: mean latency {1e3 * lat:7.2f} ms"
                for rtt, lat in sorted(tls_result.latency_by_rtt.items())
            )
            return {
                "json": {
                    "tls": [vars(p) for p in tls_result.points],
                    "plain": [vars(p) for p in plain_result.points],
                    "latency_by_rtt": {str(k): v for k, v in tls_result.latency_by_rtt.items()},
                },
                "text": fmt(tls_result, "secure channel (TLS)")
                + "\n"
                + fmt(plain_result, "plain HTTP (bench only)")
                + "\nlatency vs injected RTT:\n"
                + rtt_lines,
                "tls": tls_result,
                "plain": plain_result,
            }

        raise TeeguardError(f"unknown bench {which!r}")
    finally:
        shutil.rmtree(base, ignore_errors=True)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teeguard",
        description="Trust management for simulated TEE applications",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--deployment",
        default=os.environ.get("TEEGUARD_DEPLOYMENT", "./deployment"),
        help="deployment directory (default ./deployment; env TEEGUARD_DEPLOYMENT)",
    )
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument(
        "--identity", default="operator", help="client identity name for API calls"
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    sub.add_parser("init", help="initialize a new single-machine deployment")

    p = sub.add_parser("serve", help="run the service until SIGTERM/SIGINT")
    p.add_argument(
        "--data-dir",
        default=os.environ.get("TEEGUARD_DATA_DIR"),
        help="service data directory (env TEEGUARD_DATA_DIR)",
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--approval-timeout", type=float, default=10.0)

    p = sub.add_parser("approval-serve", help="run one board member's approval daemon")
    p.add_argument("--config", required=True, help="JSON config with member_key and rule")

    p = sub.add_parser("policy", help="manage security policies")
    policy_sub = p.add_subparsers(dest="policy_cmd", required=True)
    pc = policy_sub.add_parser("create")
    pc.add_argument("-f", "--file", required=True)
    pc.add_argument("--name", default=None)
    pc.add_argument("--timeout", type=float, default=60.0)
    ps = policy_sub.add_parser("show")
    ps.add_argument("name")
    pu = policy_sub.add_parser("update")
    pu.add_argument("name")
    pu.add_argument("-f", "--file", required=True)
    pu.add_argument("--timeout", type=float, default=60.0)
    pd = policy_sub.add_parser("delete")
    pd.add_argument("name")
    pd.add_argument("--timeout", type=float, default=60.0)
    pa = policy_sub.add_parser("approve-status")
    pa.add_argument("change")

    p = sub.add_parser("attest-instance", help="verify the running instance")
    p.add_argument("--mre", action="append", help="permitted measurement (hex); repeatable")

    p = sub.add_parser("override-unclean-shutdown", help="operator recovery after a crash")
    p.add_argument("--data-dir", required=True)
    p.add_argument(
        "--yes-i-accept-rollback-risk",
        action="store_true",
        help="explicit confirmation; without it the override is refused",
    )

    p = sub.add_parser("run-demo", help="run a demo application end to end")
    p.add_argument("demo", choices=["counter", "ml"])
    p.add_argument("--workdir", default=None)

    p = sub.add_parser("bench", help="micro-benchmarks (CSV + summary)")
    p.add_argument("bench_cmd", choices=["counters", "attestation", "approval"])
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--csv", default=None, help="write CSV to this path")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "init": cmd_init,
        "serve": cmd_serve,
        "approval-serve": cmd_approval_serve,
        "policy": cmd_policy,
        "attest-instance": cmd_attest_instance,
        "override-unclean-shutdown": cmd_override,
        "run-demo": cmd_run_demo,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.cmd](args)
    except VersionMismatch as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_VERSION_MISMATCH
    except ConcurrentInstance as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_CONCURRENT_INSTANCE
    except AttestationError as e:
        print(f"attestation failure [{e.code}]: {e}", file=sys.stderr)
        return EXIT_ATTESTATION
    except TeeguardError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_GENERIC
    except OSError as e:
        print(f"network error: {e}", file=sys.stderr)
        return EXIT_NETWORK


if __name__ == "__main__":
    sys.exit(main())
