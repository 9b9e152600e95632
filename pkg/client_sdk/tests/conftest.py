"""SDK test fixtures.

The tests stand up the real service (the `teeguard` package is a test
dependency only; the SDK sources never import it) and drive it purely
through the SDK's wire surface.
"""

import pytest

from teeguard.channel import SecureChannel
from teeguard.deploy import Deployment
from teeguard.tee import VirtualClock


class ServiceWorld:
    def __init__(self, tmp_path):
        self.tmp_path = tmp_path
        self.deployment = Deployment.init(tmp_path / "deployment")
        self.service = self.deployment.make_service(counter_clock=VirtualClock())
        self.service.start()

    @property
    def address(self):
        return self.service.address

    def owner_channel(self):
        host, port = self.address
        return SecureChannel(
            host,
            port,
            client_identity=self.deployment.client_identity(),
            server_ca_pem=self.deployment.ca_root_pem(),
        )

    def submit_policy(self, name, text):
        import time

        channel = self.owner_channel()
        try:
            status, body = channel.request_json("POST", f"/policy/{name}", {"text": text})
            assert status == 202, body
            deadline = time.monotonic() + 10
            while time.monotonic() < deadline:
                status, state = channel.request_json("GET", f"/change/{body['change']}")
                if state["status"] != "pending":
                    assert state["status"] == "approved", state
                    return state
                time.sleep(0.02)
            raise TimeoutError("policy change still pending")
        finally:
            channel.close()

    def read_secrets(self, name):
        import time

        channel = self.owner_channel()
        try:
            status, body = channel.request_json("GET", f"/policy/{name}/secrets")
            assert status == 202, body
            deadline = time.monotonic() + 10
            while time.monotonic() < deadline:
                status, state = channel.request_json("GET", f"/change/{body['change']}")
                if state["status"] != "pending":
                    assert state["status"] == "approved", state
                    return state["result"]["secrets"]
                time.sleep(0.02)
            raise TimeoutError("secrets read still pending")
        finally:
            channel.close()

    def close(self):
        if self.service.running_token is not None:
            self.service.stop()


@pytest.fixture
def service_world(tmp_path):
    world = ServiceWorld(tmp_path)
    yield world
    world.close()
