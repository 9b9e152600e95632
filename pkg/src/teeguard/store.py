"""Embedded encrypted store backing the service.

A single file holds five tables (policies, secrets, tag-records,
version-record, audit-log) as one canonical JSON document, AEAD-encrypted
as a whole. Opening authenticates the full image, so any byte flip or a
wrong key refuses to open; commits rewrite through a temp file and an
atomic rename. The database version ``v`` lives inside the encrypted image
as a distinguished record so it is covered by the same integrity envelope.

Every mutation appends an audit event carrying enough data to rebuild the
tables, which :func:`replay_audit` exercises.
"""

from __future__ import annotations

import copy
import json
import os
import threading
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

from . import crypto
from .crypto import DEFAULT_ENTROPY, Entropy, SymmetricKey
from .errors import IntegrityError, StoreIntegrityError

STORE_MAGIC = b"TGDB1"

_EMPTY_STATE: dict[str, Any] = {
    "format": 1,
    "version_record": {"v": 0},
    "policies": {},
    "secrets": {},
    "tag_records": {},
    "audit_log": [],
}


class EncryptedStore:
    """Transactional whole-file encrypted state store."""

    def __init__(
        self,
        path: Path | str,
        db_key: SymmetricKey,
        entropy: Entropy = DEFAULT_ENTROPY,
    ):
        self.path = Path(path)
        self._key = db_key
        self._entropy = entropy
        self._lock = threading.RLock()
        if self.path.exists():
            self._state = self._load()
        else:
            self._state = copy.deepcopy(_EMPTY_STATE)
            self._commit()

    # -- persistence ---------------------------------------------------------

    def _load(self) -> dict[str, Any]:
        raw = self.path.read_bytes()
        if not raw.startswith(STORE_MAGIC):
            raise StoreIntegrityError(f"not a store file: {self.path}")
        try:
            plain = crypto.seal_decrypt(self._key, raw[len(STORE_MAGIC) :], STORE_MAGIC)
        except IntegrityError as e:
            raise StoreIntegrityError(
                f"store {self.path} failed authentication (tampered or wrong key)"
            ) from e
        return json.loads(plain)

    def _commit(self) -> None:
        plain = json.dumps(self._state, sort_keys=True, separators=(",", ":")).encode()
        blob = crypto.seal_encrypt(self._key, plain, STORE_MAGIC, self._entropy)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_bytes(STORE_MAGIC + blob)
        os.replace(tmp, self.path)

    # -- access --------------------------------------------------------------

    @property
    def version(self) -> int:
        with self._lock:
            return int(self._state["version_record"]["v"])

    def set_version(self, v: int) -> None:
        with self._lock:
            self._state["version_record"]["v"] = int(v)
            self.append_audit("version_committed", v=int(v))
            self._commit()

    def read(self) -> dict[str, Any]:
        """Snapshot of the decrypted state (callers must not mutate it)."""
        with self._lock:
            return copy.deepcopy(self._state)

    @contextmanager
    def transaction(self) -> Iterator[dict[str, Any]]:
        """Serialized read-modify-write; commits (durably) on normal exit."""
        with self._lock:
            working = copy.deepcopy(self._state)
            yield working
            self._state = working
            self._commit()

    def append_audit(self, event_type: str, **data: Any) -> None:
        """Append an audit record to the in-memory state (committed by the
        next transaction or explicit commit)."""
        with self._lock:
            log = self._state["audit_log"]
            log.append(
                {
                    "seq": len(log) + 1,
                    "type": event_type,
                    "at": time.time(),
                    "data": data,
                }
            )

    def commit_audit(self, event_type: str, **data: Any) -> None:
        """Append an audit record and commit it durably."""
        with self._lock:
            self.append_audit(event_type, **data)
            self._commit()

    # convenience table accessors (all under the lock)

    def get_policy(self, name: str) -> dict[str, Any] | None:
        with self._lock:
            rec = self._state["policies"].get(name)
            return copy.deepcopy(rec) if rec is not None else None

    def get_secrets(self, name: str) -> dict[str, str]:
        with self._lock:
            return dict(self._state["secrets"].get(name, {}))

    def get_tag_record(self, key: str) -> dict[str, Any] | None:
        with self._lock:
            rec = self._state["tag_records"].get(key)
            return copy.deepcopy(rec) if rec is not None else None

    def list_policies(self) -> list[str]:
        with self._lock:
            return sorted(self._state["policies"])


def replay_audit(events: list[dict[str, Any]]) -> dict[str, Any]:
    """Rebuild the table state implied by an audit log.

    Returns a dict shaped like the store state minus the audit log itself;
    used to check that every mutation is event-sourced.
    """
    state = copy.deepcopy(_EMPTY_STATE)
    del state["audit_log"]
    for event in events:
        etype, data = event["type"], event["data"]
        if etype in ("policy_created", "policy_updated"):
            state["policies"][data["name"]] = copy.deepcopy(data["record"])
            if "secrets" in data:
                state["secrets"][data["name"]] = copy.deepcopy(data["secrets"])
        elif etype == "policy_deleted":
            state["policies"].pop(data["name"], None)
            state["secrets"].pop(data["name"], None)
            for key in [
                k
                for k in state["tag_records"]
                if k.split("/", 1)[0] == data["name"]
            ]:
                del state["tag_records"][key]
        elif etype == "tag_pushed":
            state["tag_records"][data["key"]] = {
                "expected_tag": data["tag"],
                "last_event": data["event"],
                "sequence": data["sequence"],
            }
        elif etype == "tag_records_cleared":
            for key in data["keys"]:
                state["tag_records"].pop(key, None)
        elif etype == "version_committed":
            state["version_record"]["v"] = data["v"]
        # non-mutating events (secrets_read, session_attested, override_*)
        # carry no table changes
    return state
