import base64
import shutil
import ssl

import pytest

from teeguard import certs
from teeguard.approval import AllowAllRule, ApprovalService, DenyAllRule
from teeguard.channel import ChannelError, SecureChannel
from teeguard.crypto import SigningKeyPair
from teeguard.errors import VersionMismatch
from teeguard.runtime import ApplicationContext, run_counter_app
from teeguard.server import SERVICE_CODE
from teeguard.store import replay_audit
from teeguard.tee import AttestationReport, measure
from teeguard.volume import empty_volume_tag

APP_CODE = b"integration demo app v1"
APP_MRE = measure(APP_CODE).hex()


def app_policy(strict=False, secret_value="marker-secret-value-0123456789ab"):
    return f"""
name: demo_policy
services:
  - name: demo_app
    image_name: demo_image
    command: demo --run
    mrenclaves: ["{APP_MRE}"]
    strict_mode: {str(strict).lower()}
    secrets: [api_token]
    injection_files: ["data:app.conf"]
images:
  - name: demo_image
    volumes:
      - name: data
        path: /data
volumes:
  - name: data
secrets:
  - name: api_token
    kind: explicit
    value: {secret_value}
"""


def start_app(world, data_root, policy="demo_policy", code=APP_CODE, write_back=False):
    return ApplicationContext.startup(
        code=code,
        platform=world.deployment.platform,
        qa=world.deployment.qa,
        service_address=world.address,
        data_root=data_root,
        policy_name=policy,
        ca_root_pem=world.deployment.ca_root_pem(),
        write_back=write_back,
    )


# ---------------------------------------------------------------------------
# Transport and instance attestation
# ---------------------------------------------------------------------------


def test_health_over_mutual_tls(world):
    status, body = world.owner_channel().request_json("GET", "/health")
    assert status == 200 and body["status"] == "ok"


def test_handshake_refused_without_client_cert(world):
    host, port = world.address
    channel = SecureChannel(host, port, server_ca_pem=world.deployment.ca_root_pem())
    with pytest.raises(ChannelError):
        channel.connect()
        channel.request("GET", "/health")


def test_handshake_refused_with_untrusted_client_cert(world, tmp_path):
    rogue_key = SigningKeyPair.generate()
    rogue_ca = certs.make_ca_certificate("rogue-ca", rogue_key)
    path = certs.write_identity(tmp_path / "rogue.pem", rogue_ca, rogue_key)
    host, port = world.address
    channel = SecureChannel(host, port, client_identity=path)
    with pytest.raises(ChannelError):
        channel.connect()
        channel.request("GET", "/health")


def test_report_endpoint_verifies_under_qa(world):
    status, raw = world.owner_channel().request("GET", "/report")
    assert status == 200
    report = AttestationReport.decode(raw)
    assert report.verify(world.deployment.qa.public_key)
    assert report.mre == measure(SERVICE_CODE)
    assert report.bound_pubkey == world.service.identity.public


def test_explicit_attestation_pins_channel_key(world):
    # client distrusts the CA: verifies the raw report and pins the TLS key
    channel = world.owner_channel()
    channel.connect()
    server_pub = certs.pubkey_from_cert(channel.server_certificate())
    _status, raw = channel.request("GET", "/report")
    report = AttestationReport.decode(raw)
    assert report.bound_pubkey == server_pub


def test_server_cert_chains_to_service_ca(world):
    channel = world.owner_channel()
    channel.connect()
    leaf = channel.server_certificate()
    assert certs.verify_cert_signature(leaf, world.deployment.ca.public_key)
    assert certs.mre_from_cert(leaf) == measure(SERVICE_CODE).hex()


def test_requests_before_admission_refused(cold_world):
    service = cold_world.deployment.make_service()
    service._start_http()  # listening but never admitted
    try:
        host, port = service.address
        channel = SecureChannel(
            host,
            port,
            client_identity=cold_world.deployment.client_identity(),
            server_ca_pem=cold_world.deployment.ca_root_pem(),
        )
        status, body = channel.request_json("GET", "/health")
        assert status == 503
        assert body["error"] == "service-not-admitted"
        channel.close()
    finally:
        service.abort()


# ---------------------------------------------------------------------------
# Policy endpoints
# ---------------------------------------------------------------------------


def test_policy_create_read_roundtrip(world):
    channel = world.owner_channel()
    world.submit_policy("demo_policy", app_policy(), channel)
    status, body = channel.request_json("GET", "/policy/demo_policy")
    assert status == 200
    assert body["version"] == 1


def test_policy_not_found_and_unauthorized_uniform(world):
    owner = world.owner_channel("alice")
    world.submit_policy("demo_policy", app_policy(), owner)
    stranger = world.owner_channel("mallory")
    status_missing, body_missing = stranger.request_json("GET", "/policy/ghost")
    status_foreign, body_foreign = stranger.request_json("GET", "/policy/demo_policy")
    assert status_missing == status_foreign == 404
    assert body_missing == body_foreign  # existence not leaked


def test_change_status_restricted_to_requester(world):
    owner = world.owner_channel("alice")
    status, body = owner.request_json(
        "POST", "/policy/demo_policy", {"text": app_policy()}
    )
    change_id = body["change"]
    world.poll_change(owner, change_id)
    stranger = world.owner_channel("mallory")
    status, _ = stranger.request_json("GET", f"/change/{change_id}")
    assert status == 404


def test_policy_update_wrong_cert_leaves_policy(world):
    owner = world.owner_channel("alice")
    world.submit_policy("demo_policy", app_policy(), owner)
    stranger = world.owner_channel("mallory")
    status, _ = stranger.request_json(
        "PUT", "/policy/demo_policy", {"text": app_policy()}
    )
    assert status == 404
    status, body = owner.request_json("GET", "/policy/demo_policy")
    assert body["version"] == 1


def test_board_governed_create_via_approval_services(world):
    approver = ApprovalService(
        SigningKeyPair.generate(),
        AllowAllRule(),
        require_client_ca_pem=world.deployment.ca_root_pem(),
    ).start()
    denier = ApprovalService(
        SigningKeyPair.generate(),
        DenyAllRule(),
        require_client_ca_pem=world.deployment.ca_root_pem(),
    ).start()
    try:
        text = f"""
name: governed
services:
  - name: app
    command: run
    mrenclaves: ["{APP_MRE}"]
board:
  threshold: 1
  members:
    - certificate: {approver.member_certificate}
      approval_url: {approver.url}
    - certificate: {denier.member_certificate}
      approval_url: {denier.url}
"""
        world.submit_policy("governed", text, expect="approved")

        # a veto seat held by the denier blocks the same change
        text_veto = text.replace(
            f"certificate: {denier.member_certificate}",
            f"certificate: {denier.member_certificate}\n      veto: true",
        ).replace("name: governed", "name: governed2")
        world.submit_policy("governed2", text_veto, expect="rejected")
    finally:
        approver.stop()
        denier.stop()


def test_secrets_read_returns_values(world):
    owner = world.owner_channel()
    world.submit_policy("demo_policy", app_policy(), owner)
    status, body = owner.request_json("GET", "/policy/demo_policy/secrets")
    assert status == 202
    outcome = world.poll_change(owner, body["change"])
    assert outcome["status"] == "approved"
    assert outcome["result"]["secrets"]["api_token"] == "marker-secret-value-0123456789ab"


# ---------------------------------------------------------------------------
# Application lifecycle end to end
# ---------------------------------------------------------------------------


def test_full_lifecycle_attest_write_push_restart(world, tmp_path):
    world.submit_policy("demo_policy", app_policy())
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)

    ctx = start_app(world, app_root)
    assert ctx.argv == ["demo", "--run"]
    # template resolved transparently and served from memory
    ctx.write_file("data", "app.conf", b"token=$$api_token$$\n")
    assert ctx.read_file("data", "app.conf") == b"token=marker-secret-value-0123456789ab\n"
    ctx.write_file("data", "result.bin", b"computed output")
    ctx.exit()

    # clean restart admits and sees the data
    ctx2 = start_app(world, app_root)
    assert ctx2.read_file("data", "result.bin") == b"computed output"
    ctx2.exit()


def test_wrong_code_bundle_rejected_no_config(world, tmp_path):
    world.submit_policy("demo_policy", app_policy())
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)
    from teeguard.errors import AttestationError

    with pytest.raises(AttestationError) as exc:
        start_app(world, app_root, code=b"tampered build")
    assert exc.value.code == "mre-rejected"
    assert not (app_root / "data" / ".fspf").exists()  # nothing materialized


def test_volume_rollback_detected_at_restart(world, tmp_path):
    world.submit_policy("demo_policy", app_policy())
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)

    ctx = start_app(world, app_root)
    ctx.write_file("data", "state.bin", b"old state")
    ctx.exit()
    snapshot = tmp_path / "snapshot"
    shutil.copytree(app_root / "data", snapshot)

    ctx2 = start_app(world, app_root)
    ctx2.write_file("data", "state.bin", b"new state")
    ctx2.exit()

    # adversary restores the older volume snapshot
    shutil.rmtree(app_root / "data")
    shutil.copytree(snapshot, app_root / "data")
    from teeguard.errors import AttestationError

    with pytest.raises(AttestationError) as exc:
        start_app(world, app_root)
    assert exc.value.code == "tag-mismatch"


def test_strict_mode_gate_and_board_approved_recovery(world, tmp_path):
    world.submit_policy("demo_policy", app_policy(strict=True))
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)

    ctx = start_app(world, app_root)
    ctx.write_file("data", "work.bin", b"progress")
    ctx.flush_pushes()
    ctx.abort()  # killed before the exit push

    from teeguard.errors import AttestationError
    from teeguard.volume import ShieldedVolume

    with pytest.raises(AttestationError) as exc:
        start_app(world, app_root)
    assert exc.value.code == "restart-gate"

    # operator reads the actual tag and ships a board-approved policy update
    # that pins the volume's declared tag to it
    actual_tag = ShieldedVolume.peek_tag(app_root / "data").hex()
    updated = f"""
name: demo_policy
services:
  - name: demo_app
    image_name: demo_image
    command: demo --run
    mrenclaves: ["{APP_MRE}"]
    strict_mode: true
    secrets: [api_token]
images:
  - name: demo_image
    volumes:
      - name: data
        path: /data
volumes:
  - name: data
secrets:
  - name: api_token
    kind: explicit
    value: marker-secret-value-0123456789ab
  - name: data_fspf_tag
    kind: explicit
    value: {actual_tag}
"""
    owner = world.owner_channel()
    status, body = owner.request_json("PUT", "/policy/demo_policy", {"text": updated})
    assert status == 202
    outcome = world.poll_change(owner, body["change"])
    assert outcome["status"] == "approved"

    ctx2 = start_app(world, app_root)  # admitted against the updated tag
    assert ctx2.read_file("data", "work.bin") == b"progress"
    ctx2.exit()


def test_counter_app_and_push_coalescing(world, tmp_path):
    world.submit_policy("demo_policy", app_policy())
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)
    ctx = start_app(world, app_root, write_back=True)
    last = run_counter_app(ctx, "data", 50)
    assert last == 50
    record = world.service.tags.expected("demo_policy", "demo_app", "data")
    assert record["last_event"] == "exit"
    assert record["expected_tag"] == ctx._volumes["data"].tag.hex()


def test_session_superseded_by_new_attestation(world, tmp_path):
    world.submit_policy("demo_policy", app_policy())
    root_a, root_b = tmp_path / "a", tmp_path / "b"
    (root_a / "data").mkdir(parents=True)
    ctx_a = start_app(world, root_a)
    ctx_a.write_file("data", "x", b"1")
    ctx_a.exit()

    shutil.copytree(root_a / "data", root_b / "data")
    ctx_b = start_app(world, root_b)  # supersedes a's push rights
    old_token = ctx_a.session_token
    status, body = world.owner_channel().request_json(
        "POST",
        "/tags",
        {"session": old_token, "volume": "data", "tag": "00" * 32, "event": "close"},
    )
    assert status == 404
    ctx_b.exit()


def test_restarted_instance_keeps_identity(cold_world, tmp_path):
    # identity keys come from sealed storage: a restart on the same
    # platform binds the same public key into its report
    world = cold_world
    service = world.start_service(data_dir=tmp_path / "svc")
    first_pubkey = service.report.bound_pubkey
    service.stop()
    second = world.start_service(data_dir=tmp_path / "svc")
    assert second.report.bound_pubkey == first_pubkey
    assert second.identity.public == first_pubkey
    second.stop()


def test_service_restart_cycle_and_crash_refusal(cold_world, tmp_path):
    world = cold_world
    service = world.start_service(data_dir=tmp_path / "svc")
    world.submit_policy("demo_policy", app_policy())
    service.stop()  # clean shutdown commits v = c

    second = world.start_service(data_dir=tmp_path / "svc")
    status, body = world.owner_channel().request_json("GET", "/policy/demo_policy")
    assert status == 200 and body["version"] == 1  # state survived
    second.abort()  # crash: no commit

    with pytest.raises(VersionMismatch):
        world.start_service(data_dir=tmp_path / "svc")


def test_audit_log_replay_matches_store(world, tmp_path):
    world.submit_policy("demo_policy", app_policy())
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)
    ctx = start_app(world, app_root)
    ctx.write_file("data", "f", b"x")
    ctx.exit()
    final = world.service.store.read()
    replayed = replay_audit(final["audit_log"])
    for table in ("policies", "secrets", "tag_records"):
        assert replayed[table] == final[table]


def test_no_plaintext_at_rest_across_lifecycle(world, tmp_path):
    secret = "planted-marker-0123456789abcdefXYZ"
    world.submit_policy("demo_policy", app_policy(secret_value=secret))
    app_root = tmp_path / "app"
    (app_root / "data").mkdir(parents=True)
    ctx = start_app(world, app_root)
    ctx.write_file("data", "app.conf", b"token=$$api_token$$\n")
    assert secret.encode() in ctx.read_file("data", "app.conf")
    plain_payload = b"written-plaintext-marker-9876543210"
    ctx.write_file("data", "payload.bin", plain_payload)
    ctx.exit()
    world.service.stop()

    scanned = 0
    for base in (tmp_path, world.tmp_path):
        for f in base.rglob("*"):
            if f.is_file():
                blob = f.read_bytes()
                assert secret.encode() not in blob, f
                assert plain_payload not in blob, f
                scanned += 1
    assert scanned > 5
