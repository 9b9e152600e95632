import inspect

import pytest

from teeguard.crypto import SymmetricKey
from teeguard.errors import AttestationError
from teeguard.runtime import ApplicationContext, TagPushError, run_inference_app
from teeguard.tee import measure
from teeguard.volume import ShieldedVolume

APP_CODE = b"runtime test app"
APP_MRE = measure(APP_CODE).hex()


def runtime_policy(env=True):
    env_block = (
        """
    environment:
      MODE: production
      TOKEN: "$api_token"
"""
        if env
        else ""
    )
    return f"""
name: rt_policy
services:
  - name: rt_app
    image_name: rt_image
    command: app --serve $api_token
    mrenclaves: ["{APP_MRE}"]
    secrets: [api_token]{env_block}
images:
  - name: rt_image
    volumes:
      - name: data
        path: /data
volumes:
  - name: data
secrets:
  - name: api_token
    kind: explicit
    value: tok-xyz
"""


def start(world, data_root, **kw):
    return ApplicationContext.startup(
        code=APP_CODE,
        platform=world.deployment.platform,
        qa=world.deployment.qa,
        service_address=world.address,
        data_root=data_root,
        policy_name="rt_policy",
        ca_root_pem=world.deployment.ca_root_pem(),
        **kw,
    )


def test_golden_environment_matches_policy(world, tmp_path):
    world.submit_policy("rt_policy", runtime_policy())
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    ctx = start(world, root)
    # argv and env exactly as declared, with references resolved
    assert ctx.argv == ["app", "--serve", "tok-xyz"]
    assert ctx.env == {"MODE": "production", "TOKEN": "tok-xyz"}
    assert ctx.volumes() == ["data"]
    ctx.exit()


def test_policy_name_via_environment_variable(world, tmp_path, monkeypatch):
    world.submit_policy("rt_policy", runtime_policy())
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    monkeypatch.setenv("TEEGUARD_POLICY", "rt_policy")
    ctx = ApplicationContext.startup(
        code=APP_CODE,
        platform=world.deployment.platform,
        qa=world.deployment.qa,
        service_address=world.address,
        data_root=root,
        ca_root_pem=world.deployment.ca_root_pem(),
    )
    assert ctx.argv[0] == "app"
    ctx.exit()


def test_no_key_extraction_surface(world, tmp_path):
    world.submit_policy("rt_policy", runtime_policy())
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    ctx = start(world, root)
    # capability audit: no public attribute or method exposes volume keys
    public = [n for n in dir(ctx) if not n.startswith("_")]
    assert "fs_keys" not in public
    for name in public:
        value = getattr(ctx, name)
        if inspect.ismethod(value) or callable(value):
            continue
        assert not isinstance(value, SymmetricKey)
        assert not (
            isinstance(value, dict)
            and any(isinstance(v, SymmetricKey) for v in value.values())
        )
    ctx.exit()


def test_explicit_instance_attestation_path(world, tmp_path):
    world.submit_policy("rt_policy", runtime_policy())
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    from teeguard.server import SERVICE_CODE

    ctx = ApplicationContext.startup(
        code=APP_CODE,
        platform=world.deployment.platform,
        qa=world.deployment.qa,
        service_address=world.address,
        data_root=root,
        policy_name="rt_policy",
        permitted_service_mres={measure(SERVICE_CODE).hex()},
    )
    assert ctx.argv[0] == "app"
    ctx.exit()


def test_explicit_attestation_rejects_wrong_service_mre(world, tmp_path):
    world.submit_policy("rt_policy", runtime_policy())
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    with pytest.raises(AttestationError):
        ApplicationContext.startup(
            code=APP_CODE,
            platform=world.deployment.platform,
            qa=world.deployment.qa,
            service_address=world.address,
            data_root=root,
            policy_name="rt_policy",
            permitted_service_mres={"00" * 32},
        )


def test_exit_push_failure_raises_in_strict_mode(world, tmp_path):
    strict = runtime_policy().replace(
        "secrets: [api_token]", "secrets: [api_token]\n    strict_mode: true"
    )
    world.submit_policy("rt_policy", strict)
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    ctx = start(world, root)
    ctx.write_file("data", "f", b"x")
    ctx.flush_pushes()
    # sever the session server-side: the exit push cannot be acknowledged
    world.service.sessions.invalidate_policy("rt_policy")
    with pytest.raises(TagPushError):
        ctx.exit()


def test_close_sync_exit_events_reach_store(world, tmp_path):
    world.submit_policy("rt_policy", runtime_policy())
    root = tmp_path / "app"
    (root / "data").mkdir(parents=True)
    ctx = start(world, root)
    ctx.write_file("data", "f", b"1")
    ctx.flush_pushes()
    assert (
        world.service.tags.expected("rt_policy", "rt_app", "data")["last_event"]
        == "close"
    )
    ctx.sync("data")
    ctx.flush_pushes()
    assert (
        world.service.tags.expected("rt_policy", "rt_app", "data")["last_event"]
        == "sync"
    )
    ctx.exit()
    record = world.service.tags.expected("rt_policy", "rt_app", "data")
    assert record["last_event"] == "exit"
    assert record["expected_tag"] == ShieldedVolume.peek_tag(root / "data").hex()


def test_inference_demo_flow_owner_decrypts(world, tmp_path):
    from teeguard.crypto import KeyPurpose

    code = b"runtime test app"
    text = f"""
name: rt_policy
services:
  - name: infer
    image_name: img
    command: infer
    mrenclaves: ["{APP_MRE}"]
images:
  - name: img
    volumes:
      - name: model
        path: /model
      - name: io
        path: /io
volumes:
  - name: model
  - name: io
"""
    world.submit_policy("rt_policy", text)
    secrets = world.service.registry.secrets_of("rt_policy")
    root = tmp_path / "app"
    model_key = SymmetricKey(bytes.fromhex(secrets["model_fspf_key"]), KeyPurpose.FS_ENCRYPTION)
    io_key = SymmetricKey(bytes.fromhex(secrets["io_fspf_key"]), KeyPurpose.FS_ENCRYPTION)
    mv = ShieldedVolume.create(root / "model", model_key)
    mv.write_file("model.bin", b"weights")
    iv = ShieldedVolume.create(root / "io", io_key)
    iv.write_file("input.bin", b"image")
    update = text + f"""
secrets:
  - {{name: model_fspf_tag, kind: explicit, value: {mv.tag.hex()}}}
  - {{name: io_fspf_tag, kind: explicit, value: {iv.tag.hex()}}}
"""
    owner = world.owner_channel()
    status, body = owner.request_json("PUT", "/policy/rt_policy", {"text": update})
    assert status == 202
    assert world.poll_change(owner, body["change"])["status"] == "approved"

    ctx = start(world, root)
    result = run_inference_app(ctx, "model", "io")
    reopened = ShieldedVolume.open(root / "io", io_key)
    assert reopened.read_file("output.bin") == result
