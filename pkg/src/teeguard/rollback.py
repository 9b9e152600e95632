"""Rollback protection for the service's own database.

Admission protocol: the database version ``v`` must equal the platform
counter ``c`` at startup; the instance then increments the counter and
requires the result to be exactly ``v + 1``. Any other value means a
second instance claimed the counter first. During operation ``v < c``
holds; a clean shutdown commits ``v = c`` so the next startup is admitted.
A crash leaves ``v < c`` and the next startup refuses: a crash is treated
as an attack, and recovery needs the explicit operator override.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .errors import ConcurrentInstance, TeeguardError, VersionMismatch
from .store import EncryptedStore
from .tee import PlatformCounter


@dataclass
class RunningToken:
    """Witness that this instance holds the counter slot ``claimed``."""

    claimed: int
    admitted_at: float = field(default_factory=time.time)
    committed: bool = False


class StartupProtocol:
    """The two observable phases of startup admission.

    Split so tests can interleave competing instances step by step;
    :func:`startup_guard` runs both phases back to back.
    """

    def __init__(self, store: EncryptedStore, counter: PlatformCounter):
        self.store = store
        self.counter = counter
        self._v: int | None = None

    def phase_check(self) -> None:
        """Refuse unless the database version matches the counter."""
        v = self.store.version
        c = self.counter.read()
        if v != c:
            raise VersionMismatch(
                f"database version {v} != platform counter {c} "
                "(stale or rolled-back database, or unclean prior shutdown)"
            )
        self._v = v

    def phase_claim(self) -> RunningToken:
        """Increment the counter; exactly v+1 wins the single slot."""
        assert self._v is not None, "phase_check must run first"
        claimed = self.counter.increment()
        if claimed != self._v + 1:
            raise ConcurrentInstance(
                f"counter moved to {claimed}, expected {self._v + 1}: "
                "another instance is already running"
            )
        return RunningToken(claimed=claimed)


def startup_guard(store: EncryptedStore, counter: PlatformCounter) -> RunningToken:
    protocol = StartupProtocol(store, counter)
    protocol.phase_check()
    return protocol.phase_claim()


def shutdown_commit(
    store: EncryptedStore, counter: PlatformCounter, token: RunningToken
) -> None:
    """Set ``v`` to the current counter atomically with the database commit.

    Requires in-flight requests to be drained first. A second call is an
    error and changes nothing; a persistence failure leaves ``v`` behind the
    counter so the next startup refuses (fail-safe).
    """
    if token.committed:
        raise TeeguardError("shutdown already committed for this token")
    store.set_version(counter.read())
    token.committed = True


def override_unclean_shutdown(
    store: EncryptedStore, counter: PlatformCounter, *, confirm: bool
) -> int:
    """Operator escape hatch after a crash: re-align ``v`` with the counter.

    Refuses without the explicit confirmation flag; emits an audit record.
    Returns the new version.
    """
    if not confirm:
        raise TeeguardError(
            "override requires explicit confirmation (--yes-i-accept-rollback-risk)"
        )
    c = counter.read()
    with store.transaction() as state:
        state["version_record"]["v"] = c
        state["audit_log"].append(
            {
                "seq": len(state["audit_log"]) + 1,
                "type": "override_unclean_shutdown",
                "at": time.time(),
                "data": {"v": c},
            }
        )
    return c
