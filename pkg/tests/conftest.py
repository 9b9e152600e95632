"""Shared fixtures: a full single-machine deployment with a live service."""

import pytest

from teeguard.channel import SecureChannel
from teeguard.deploy import Deployment
from teeguard.tee import VirtualClock


class World:
    """A started service plus the handles tests need to talk to it."""

    def __init__(self, tmp_path, approval_timeout=5.0):
        self.tmp_path = tmp_path
        self.deployment = Deployment.init(tmp_path / "deployment")
        self.approval_timeout = approval_timeout
        self.service = None
        self._channels = []

    def start_service(self, data_dir=None, **overrides):
        overrides.setdefault("counter_clock", VirtualClock())
        overrides.setdefault("approval_timeout", self.approval_timeout)
        self.service = self.deployment.make_service(data_dir=data_dir, **overrides)
        self.service.start()
        return self.service

    @property
    def address(self):
        return self.service.address

    def owner_channel(self, name="operator"):
        host, port = self.address
        channel = SecureChannel(
            host,
            port,
            client_identity=self.deployment.client_identity(name),
            server_ca_pem=self.deployment.ca_root_pem(),
        )
        self._channels.append(channel)
        return channel

    def poll_change(self, channel, change_id, timeout=10.0):
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            status, body = channel.request_json("GET", f"/change/{change_id}")
            assert status == 200, body
            if body["status"] != "pending":
                return body
            time.sleep(0.02)
        raise TimeoutError(f"change {change_id} still pending")

    def submit_policy(self, name, text, channel=None, expect="approved"):
        channel = channel or self.owner_channel()
        status, body = channel.request_json("POST", f"/policy/{name}", {"text": text})
        assert status == 202, body
        outcome = self.poll_change(channel, body["change"])
        assert outcome["status"] == expect, outcome
        return outcome

    def close(self):
        for channel in self._channels:
            channel.close()
        if self.service is not None and self.service.running_token is not None:
            try:
                self.service.stop()
            except Exception:
                pass


@pytest.fixture
def world(tmp_path):
    w = World(tmp_path)
    w.start_service()
    yield w
    w.close()


@pytest.fixture
def cold_world(tmp_path):
    """Deployment initialized but service not yet started."""
    w = World(tmp_path)
    yield w
    w.close()
