"""Expected-tag persistence and restart admission.

Applications push their volume tags on close/sync/exit; the stored
*expected tag* is the freshness anchor a restart must match. Records live
in the rollback-guarded encrypted store and every push is committed before
it is acknowledged. Only the newest attested session of a
(policy, service) may push: attesting again supersedes the previous
session's push rights.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from .errors import FreshnessViolation, NotFoundError, RestartGateError
from .store import EncryptedStore

TAG_EVENTS = ("close", "sync", "exit")


@dataclass
class Session:
    token: str
    policy: str
    service: str
    volumes: dict[str, str] = field(default_factory=dict)  # name -> mount path
    live: bool = True
    created_at: float = field(default_factory=time.time)


class SessionManager:
    """Tracks attested sessions; newest per (policy, service) wins."""

    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._current: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()

    def register(self, policy: str, service: str, volumes: dict[str, str]) -> Session:
        with self._lock:
            session = Session(
                token=uuid.uuid4().hex, policy=policy, service=service, volumes=volumes
            )
            old_token = self._current.get((policy, service))
            if old_token is not None and old_token in self._sessions:
                self._sessions[old_token].live = False
            self._sessions[session.token] = session
            self._current[(policy, service)] = session.token
            return session

    def get_live(self, token: str) -> Session:
        with self._lock:
            session = self._sessions.get(token)
            if session is None:
                raise NotFoundError("unknown session")
            if not session.live:
                raise NotFoundError("session superseded or invalidated")
            return session

    def invalidate_policy(self, policy: str) -> None:
        with self._lock:
            for session in self._sessions.values():
                if session.policy == policy:
                    session.live = False

    def live_count(self) -> int:
        with self._lock:
            return sum(1 for s in self._sessions.values() if s.live)


def _key(policy: str, service: str, volume: str) -> str:
    return f"{policy}/{service}/{volume}"


class TagStore:
    """Per-(policy, service, volume) expected tags over the encrypted store."""

    def __init__(self, store: EncryptedStore, sessions: SessionManager):
        self.store = store
        self.sessions = sessions
        self._lock = threading.Lock()

    def push_tag(self, token: str, volume: str, tag_hex: str, event: str) -> int:
        """Record the expected tag; durable before the sequence is returned."""
        if event not in TAG_EVENTS:
            raise ValueError(f"event must be one of {TAG_EVENTS}")
        session = self.sessions.get_live(token)
        key = _key(session.policy, session.service, volume)
        with self._lock:
            with self.store.transaction() as state:
                record = state["tag_records"].get(key)
                sequence = (record["sequence"] if record else 0) + 1
                state["tag_records"][key] = {
                    "expected_tag": tag_hex,
                    "last_event": event,
                    "sequence": sequence,
                }
                state["audit_log"].append(
                    {
                        "seq": len(state["audit_log"]) + 1,
                        "type": "tag_pushed",
                        "at": time.time(),
                        "data": {
                            "key": key,
                            "tag": tag_hex,
                            "event": event,
                            "sequence": sequence,
                        },
                    }
                )
        return sequence

    def expected(self, policy: str, service: str, volume: str) -> dict | None:
        return self.store.get_tag_record(_key(policy, service, volume))

    def admit_restart(
        self,
        policy: str,
        service: str,
        volume: str,
        presented_tag: str,
        *,
        strict: bool,
        declared_tag: str,
    ) -> str:
        """Admission check for one volume at session attestation.

        Compares the presented tag against the stored expected tag (falling
        back to the policy's declared tag when no run has pushed yet, e.g.
        first start or after a board-approved tag update cleared the
        record). Strict mode additionally requires the previous execution
        to have pushed at exit. Returns an audit note on admission.
        """
        record = self.expected(policy, service, volume)
        expected = record["expected_tag"] if record else declared_tag
        if presented_tag != expected:
            raise FreshnessViolation(
                f"volume {volume!r}: presented tag {presented_tag[:16]}… does not match "
                f"expected {expected[:16]}… (rollback suspected)"
            )
        if record is not None and record["last_event"] != "exit":
            if strict:
                raise RestartGateError(
                    f"volume {volume!r}: last execution ended with "
                    f"{record['last_event']!r}, not a clean exit; restart requires a "
                    "board-approved policy update adjusting the tag"
                )
            return f"admitted without exit event (last={record['last_event']})"
        return "admitted"
