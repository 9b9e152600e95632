"""Security policies: parsing, board governance, secrets, exports.

A policy names the services it governs, the code measurements and
platforms they may run on, the volumes (with encryption key and freshness
tag) they mount, the secrets they receive, and an optional stakeholder
board whose approval gates every change. The YAML field names follow the
common deployment convention (``mrenclaves``, ``fspf_key``, ``fspf_tag``,
``pwd``, ``fspf_path``); see docs/policy-format.md.

``$NAME`` references inside policy fields stay symbolic until activation,
when they resolve against the policy's materialized secrets and imports.
An unknown ``$NAME`` in ``fspf_key``/``fspf_tag`` auto-materializes a fresh
volume key / empty-volume tag, which is how "an encrypted volume will be
automatically generated" behaves.
"""

from __future__ import annotations

import json
import shlex
import string
import threading
import time
import uuid
from dataclasses import dataclass, field

import yaml

from . import crypto
from .crypto import DEFAULT_ENTROPY, Entropy
from .errors import (
    AuthorizationError,
    ConfigurationError,
    GovernanceError,
    NotFoundError,
    PolicySyntaxError,
)
from .store import EncryptedStore
from .volume import empty_volume_tag

_VOTE_DOMAIN = b"teeguard-vote-v1:"
_PASSWORD_ALPHABET = string.ascii_letters + string.digits


# ---------------------------------------------------------------------------
# Document model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecretSpec:
    name: str
    kind: str  # "explicit" | "generated"
    value: str | None = None
    length: int = 32
    generator: str = "bytes"  # "bytes" (hex output) | "password"
    export: tuple[str, ...] = ()


@dataclass(frozen=True)
class VolumeSpec:
    name: str
    export: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImageVolumeMount:
    name: str
    path: str


@dataclass(frozen=True)
class ImageSpec:
    name: str
    volumes: tuple[ImageVolumeMount, ...] = ()


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    command: tuple[str, ...]
    mrenclaves: tuple[str, ...]
    image_name: str | None = None
    platforms: tuple[str, ...] = ()  # empty = any platform
    env: tuple[tuple[str, str], ...] = ()
    pwd: str | None = None
    fspf_path: str | None = None
    fspf_key: str | None = None
    fspf_tag: str | None = None
    injection_files: tuple[str, ...] = ()
    secrets: tuple[str, ...] = ()  # names this service is granted
    strict_mode: bool = False


@dataclass(frozen=True)
class BoardMember:
    certificate: str  # hex Ed25519 public key; the member's identity
    approval_url: str = ""
    veto: bool = False


@dataclass(frozen=True)
class PolicyBoard:
    members: tuple[BoardMember, ...]
    threshold: int  # the f+1 quorum

    def member_ids(self) -> set[str]:
        return {m.certificate for m in self.members}


@dataclass(frozen=True)
class Combination:
    """An admissible (code measurement, volume tag) pair."""

    mrenclave: str
    fspf_tag: str


@dataclass(frozen=True)
class CombinationPolicy:
    exports: tuple[Combination, ...] = ()
    permits: tuple[Combination, ...] = ()
    import_from: str | None = None
    volume: str | None = None  # whose presented tag the check applies to


@dataclass(frozen=True)
class ImportSpec:
    policy: str
    name: str


@dataclass(frozen=True)
class PolicyDocument:
    name: str
    services: tuple[ServiceSpec, ...] = ()
    images: tuple[ImageSpec, ...] = ()
    volumes: tuple[VolumeSpec, ...] = ()
    secrets: tuple[SecretSpec, ...] = ()
    board: PolicyBoard | None = None
    imports: tuple[ImportSpec, ...] = ()
    combinations: CombinationPolicy | None = None

    def exports(self) -> list[tuple[str, str]]:
        """(exported name, target policy) pairs from volumes and secrets."""
        out = []
        for v in self.volumes:
            out.extend((v.name, t) for t in v.export)
        for s in self.secrets:
            out.extend((s.name, t) for t in s.export)
        return out

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise NotFoundError(f"no service {name!r} in policy {self.name!r}")

    def image(self, name: str) -> ImageSpec | None:
        for i in self.images:
            if i.name == name:
                return i
        return None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigurationError(f"{path}: {message}")


def _str_list(value, path: str) -> tuple[str, ...]:
    _expect(isinstance(value, list), path, "must be a list")
    _expect(all(isinstance(x, str) for x in value), path, "entries must be strings")
    return tuple(value)


def parse_policy(text: str | bytes) -> PolicyDocument:
    """Parse and validate a policy document.

    Syntax errors carry the YAML line number; invariant violations name the
    offending field path. ``$NAME`` references are kept symbolic.
    """
    if isinstance(text, bytes):
        text = text.decode()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        line = None
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise PolicySyntaxError(f"invalid policy syntax: {e}", line=line) from e
    if raw is None:
        raise PolicySyntaxError("empty policy document", line=1)
    if not isinstance(raw, dict):
        raise PolicySyntaxError("policy document must be a mapping", line=1)

    _expect("name" in raw and isinstance(raw["name"], str) and raw["name"], "name", "required string")
    name = raw["name"]

    services = []
    for i, svc in enumerate(raw.get("services") or []):
        path = f"services[{i}]"
        _expect(isinstance(svc, dict), path, "must be a mapping")
        _expect(isinstance(svc.get("name"), str) and svc["name"], f"{path}.name", "required string")
        command = svc.get("command")
        if isinstance(command, str):
            argv = tuple(shlex.split(command))
        elif isinstance(command, list):
            argv = tuple(str(c) for c in command)
        else:
            argv = ()
        _expect(len(argv) > 0, f"{path}.command", "must be non-empty")
        mrenclaves = _str_list(svc.get("mrenclaves") or [], f"{path}.mrenclaves")
        _expect(len(mrenclaves) > 0, f"{path}.mrenclaves", "must be non-empty")
        env_raw = svc.get("environment") or svc.get("env") or {}
        _expect(isinstance(env_raw, dict), f"{path}.environment", "must be a mapping")
        services.append(
            ServiceSpec(
                name=svc["name"],
                command=argv,
                mrenclaves=mrenclaves,
                image_name=svc.get("image_name"),
                platforms=_str_list(svc.get("platforms") or [], f"{path}.platforms"),
                env=tuple((str(k), str(v)) for k, v in env_raw.items()),
                pwd=svc.get("pwd"),
                fspf_path=svc.get("fspf_path"),
                fspf_key=svc.get("fspf_key"),
                fspf_tag=svc.get("fspf_tag"),
                injection_files=_str_list(
                    svc.get("injection_files") or [], f"{path}.injection_files"
                ),
                secrets=_str_list(svc.get("secrets") or [], f"{path}.secrets"),
                strict_mode=bool(svc.get("strict_mode", False)),
            )
        )

    images = []
    for i, img in enumerate(raw.get("images") or []):
        path = f"images[{i}]"
        _expect(isinstance(img, dict) and isinstance(img.get("name"), str), f"{path}.name", "required string")
        mounts = []
        for j, m in enumerate(img.get("volumes") or []):
            _expect(
                isinstance(m, dict) and isinstance(m.get("name"), str) and isinstance(m.get("path"), str),
                f"{path}.volumes[{j}]",
                "needs name and path",
            )
            mounts.append(ImageVolumeMount(name=m["name"], path=m["path"]))
        images.append(ImageSpec(name=img["name"], volumes=tuple(mounts)))

    def _export_targets(value, path) -> tuple[str, ...]:
        if value is None:
            return ()
        if isinstance(value, str):
            return (value,)
        return _str_list(value, path)

    volumes = []
    for i, v in enumerate(raw.get("volumes") or []):
        path = f"volumes[{i}]"
        _expect(isinstance(v, dict) and isinstance(v.get("name"), str), f"{path}.name", "required string")
        volumes.append(
            VolumeSpec(name=v["name"], export=_export_targets(v.get("export"), f"{path}.export"))
        )

    secrets = []
    for i, s in enumerate(raw.get("secrets") or []):
        path = f"secrets[{i}]"
        _expect(isinstance(s, dict) and isinstance(s.get("name"), str), f"{path}.name", "required string")
        kind = s.get("kind", "explicit")
        _expect(kind in ("explicit", "generated"), f"{path}.kind", "must be explicit or generated")
        if kind == "explicit":
            _expect("value" in s, f"{path}.value", "explicit secret needs a value")
        generator = s.get("type", "bytes")
        _expect(generator in ("bytes", "password"), f"{path}.type", "must be bytes or password")
        length = int(s.get("length", 32))
        _expect(1 <= length <= 1024, f"{path}.length", "must be in 1..1024")
        secrets.append(
            SecretSpec(
                name=s["name"],
                kind=kind,
                value=None if s.get("value") is None else str(s["value"]),
                length=length,
                generator=generator,
                export=_export_targets(s.get("export"), f"{path}.export"),
            )
        )

    board = None
    if raw.get("board") is not None:
        b = raw["board"]
        _expect(isinstance(b, dict), "board", "must be a mapping")
        members = []
        for i, m in enumerate(b.get("members") or []):
            path = f"board.members[{i}]"
            _expect(isinstance(m, dict) and isinstance(m.get("certificate"), str), f"{path}.certificate", "required string")
            members.append(
                BoardMember(
                    certificate=m["certificate"],
                    approval_url=m.get("approval_url", ""),
                    veto=bool(m.get("veto", False)),
                )
            )
        threshold = b.get("threshold")
        _expect(isinstance(threshold, int), "board.threshold", "required integer")
        n = len(members)
        _expect(1 <= threshold <= n, "board.threshold", f"must satisfy 1 <= threshold <= {n}")
        _expect(len({m.certificate for m in members}) == n, "board.members", "member certificates must be distinct")
        board = PolicyBoard(members=tuple(members), threshold=threshold)

    imports = []
    for i, imp in enumerate(raw.get("imports") or []):
        path = f"imports[{i}]"
        _expect(
            isinstance(imp, dict) and isinstance(imp.get("policy"), str) and isinstance(imp.get("name"), str),
            path,
            "needs policy and name",
        )
        imports.append(ImportSpec(policy=imp["policy"], name=imp["name"]))

    combinations = None
    if raw.get("combinations") is not None:
        c = raw["combinations"]
        _expect(isinstance(c, dict), "combinations", "must be a mapping")

        def _combos(entries, path) -> tuple[Combination, ...]:
            out = []
            for j, e in enumerate(entries or []):
                _expect(
                    isinstance(e, dict) and isinstance(e.get("mrenclave"), str) and isinstance(e.get("fspf_tag"), str),
                    f"{path}[{j}]",
                    "needs mrenclave and fspf_tag",
                )
                out.append(Combination(mrenclave=e["mrenclave"], fspf_tag=e["fspf_tag"]))
            return tuple(out)

        combinations = CombinationPolicy(
            exports=_combos(c.get("exports"), "combinations.exports"),
            permits=_combos(c.get("permits"), "combinations.permits"),
            import_from=c.get("import_from"),
            volume=c.get("volume"),
        )

    doc = PolicyDocument(
        name=name,
        services=tuple(services),
        images=tuple(images),
        volumes=tuple(volumes),
        secrets=tuple(secrets),
        board=board,
        imports=tuple(imports),
        combinations=combinations,
    )
    service_names = [s.name for s in doc.services]
    _expect(len(set(service_names)) == len(service_names), "services", "service names must be distinct")
    volume_names = [v.name for v in doc.volumes]
    _expect(len(set(volume_names)) == len(volume_names), "volumes", "volume names must be distinct")
    secret_names = [s.name for s in doc.secrets]
    _expect(len(set(secret_names)) == len(secret_names), "secrets", "secret names must be distinct")
    for i, img in enumerate(doc.images):
        for j, m in enumerate(img.volumes):
            _expect(
                m.name in set(volume_names),
                f"images[{i}].volumes[{j}].name",
                f"references undeclared volume {m.name!r}",
            )
    return doc


# ---------------------------------------------------------------------------
# Board evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vote:
    member: str  # certificate (hex public key)
    verdict: str  # "approve" | "reject"


@dataclass(frozen=True)
class BoardDecision:
    approvals: frozenset[str]
    rejections: frozenset[str]
    vetoed: bool
    outcome: str  # "approved" | "rejected" | "pending"


def evaluate_board(board: PolicyBoard, votes: list[Vote]) -> BoardDecision:
    """Quorum rule: approved iff approvals reach the threshold and no
    veto-holder rejected; rejected once a veto-holder rejects or the
    threshold is unreachable; otherwise pending.

    Votes from non-members are discarded without affecting the decision.
    """
    members = board.member_ids()
    veto_holders = {m.certificate for m in board.members if m.veto}
    seen: dict[str, str] = {}
    for vote in votes:
        if vote.member in members and vote.member not in seen:
            seen[vote.member] = vote.verdict
    approvals = frozenset(m for m, v in seen.items() if v == "approve")
    rejections = frozenset(m for m, v in seen.items() if v == "reject")
    vetoed = bool(rejections & veto_holders)
    absent = len(members) - len(seen)
    if vetoed:
        outcome = "rejected"
    elif len(approvals) >= board.threshold:
        outcome = "approved"
    elif len(approvals) + absent < board.threshold:
        outcome = "rejected"
    else:
        outcome = "pending"
    return BoardDecision(
        approvals=approvals, rejections=rejections, vetoed=vetoed, outcome=outcome
    )


def vote_message(policy_name: str, change_digest: bytes, nonce: bytes, verdict: str) -> bytes:
    """Canonical byte string a board member signs for one vote."""
    return (
        _VOTE_DOMAIN
        + policy_name.encode()
        + b"\x00"
        + change_digest
        + nonce
        + verdict.encode()
    )


def sign_vote(
    member_key: crypto.SigningKeyPair,
    policy_name: str,
    change_digest: bytes,
    nonce: bytes,
    verdict: str,
) -> bytes:
    return crypto.sign(member_key, vote_message(policy_name, change_digest, nonce, verdict))


def verify_vote(
    member_cert: str,
    policy_name: str,
    change_digest: bytes,
    nonce: bytes,
    verdict: str,
    signature: bytes,
) -> bool:
    try:
        public = bytes.fromhex(member_cert)
    except ValueError:
        return False
    if len(public) != 32:
        return False
    return crypto.verify(public, vote_message(policy_name, change_digest, nonce, verdict), signature)


# ---------------------------------------------------------------------------
# Secret materialization and reference resolution
# ---------------------------------------------------------------------------


def materialize_secrets(
    doc: PolicyDocument,
    entropy: Entropy = DEFAULT_ENTROPY,
    existing: dict[str, str] | None = None,
) -> dict[str, str]:
    """Produce the policy's secret values.

    Explicit secrets pass through verbatim. Generated secrets draw from the
    entropy source exactly once: values in ``existing`` (from a previous
    activation) are kept stable. Each declared volume contributes
    ``<name>_fspf_key`` and ``<name>_fspf_tag`` entries, and unknown
    ``$REF`` names in a service's ``fspf_key``/``fspf_tag`` are generated
    on the spot.
    """
    existing = existing or {}
    out: dict[str, str] = {}

    def _generate(spec: SecretSpec) -> str:
        if spec.generator == "password":
            raw = entropy.random_bytes(spec.length)
            return "".join(_PASSWORD_ALPHABET[b % len(_PASSWORD_ALPHABET)] for b in raw)
        return entropy.random_bytes(spec.length).hex()

    for spec in doc.secrets:
        if spec.kind == "explicit":
            out[spec.name] = spec.value or ""
        elif spec.name in existing:
            out[spec.name] = existing[spec.name]
        else:
            out[spec.name] = _generate(spec)

    for vol in doc.volumes:
        key_name, tag_name = f"{vol.name}_fspf_key", f"{vol.name}_fspf_tag"
        if key_name not in out:
            out[key_name] = existing.get(key_name, entropy.random_bytes(32).hex())
        if tag_name not in out:
            out[tag_name] = existing.get(tag_name, empty_volume_tag().hex())

    for svc in doc.services:
        for ref, is_key in ((svc.fspf_key, True), (svc.fspf_tag, False)):
            if ref and ref.startswith("$"):
                nm = ref[1:]
                if nm not in out:
                    if nm in existing:
                        out[nm] = existing[nm]
                    elif is_key:
                        out[nm] = entropy.random_bytes(32).hex()
                    else:
                        out[nm] = empty_volume_tag().hex()
    return out


def resolve_ref(value: str, namespace: dict[str, str]) -> str:
    """Resolve a ``$NAME`` reference; concrete values pass through."""
    if value.startswith("$"):
        name = value[1:]
        if name not in namespace:
            raise ConfigurationError(
                f"unresolved policy reference ${name}", missing=[name]
            )
        return namespace[name]
    return value


# ---------------------------------------------------------------------------
# Secure-update intersection
# ---------------------------------------------------------------------------


def permitted_combinations(
    image_doc: PolicyDocument, app_doc: PolicyDocument
) -> set[Combination]:
    """Admissible (measurement, tag) pairs = image exports ∩ app permits."""
    if app_doc.combinations is None or image_doc.combinations is None:
        raise ConfigurationError("both policies need a combinations section")
    if app_doc.combinations.import_from != image_doc.name:
        raise ConfigurationError(
            f"policy {app_doc.name!r} does not import combinations from {image_doc.name!r}"
        )
    if not image_doc.combinations.exports:
        raise ConfigurationError(f"policy {image_doc.name!r} exports no combinations")
    return set(image_doc.combinations.exports) & set(app_doc.combinations.permits)


# ---------------------------------------------------------------------------
# Registry: CRUD with board governance over the encrypted store
# ---------------------------------------------------------------------------


@dataclass
class ApprovalRequest:
    policy_name: str
    change_digest: bytes
    nonce: bytes


@dataclass
class ChangeState:
    change_id: str
    action: str
    policy_name: str
    digest: str
    status: str = "pending"  # pending | approved | rejected
    reason: str = ""
    result: dict | None = None


def change_digest(action: str, name: str, old_version: int, payload: str) -> bytes:
    """Hash over the canonical serialized diff of a CRUD request."""
    canonical = json.dumps(
        {"action": action, "name": name, "old_version": old_version, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    return crypto.hash_data(canonical).data


class PolicyRegistry:
    """Policy CRUD over the encrypted store, gated by certificates and boards.

    ``collector(board, request)`` gathers authenticated votes from the
    board's approval services (the network collector lives in the server;
    tests inject stubs). Collection runs on a worker thread per change and
    the client polls :meth:`change_status`.
    """

    def __init__(
        self,
        store: EncryptedStore,
        collector=None,
        entropy: Entropy = DEFAULT_ENTROPY,
    ):
        self.store = store
        self.collector = collector or (lambda board, request: [])
        self.entropy = entropy
        self._changes: dict[str, ChangeState] = {}
        self._lock = threading.RLock()
        # serialize mutations per policy name
        self._policy_locks: dict[str, threading.Lock] = {}
        self.on_policy_mutated = None  # hook(name, action) for session invalidation

    # -- internals -----------------------------------------------------------

    def _policy_lock(self, name: str) -> threading.Lock:
        with self._lock:
            return self._policy_locks.setdefault(name, threading.Lock())

    def _record(self, name: str) -> dict:
        rec = self.store.get_policy(name)
        if rec is None:
            raise NotFoundError(f"no policy {name!r}")
        return rec

    def _require_owner(self, name: str, client_cert: str) -> dict:
        rec = self._record(name)
        if rec["owner_cert"] != client_cert:
            raise AuthorizationError(f"certificate does not own policy {name!r}")
        return rec

    def _submit(
        self,
        action: str,
        name: str,
        board: PolicyBoard | None,
        digest: bytes,
        apply_fn,
    ) -> ChangeState:
        state = ChangeState(
            change_id=uuid.uuid4().hex,
            action=action,
            policy_name=name,
            digest=digest.hex(),
        )
        with self._lock:
            self._changes[state.change_id] = state

        def _run():
            try:
                if board is None:
                    decision = None
                else:
                    request = ApprovalRequest(
                        policy_name=name,
                        change_digest=digest,
                        nonce=self.entropy.random_bytes(16),
                    )
                    votes = self.collector(board, request)
                    decision = evaluate_board(board, votes)
                if decision is None or decision.outcome == "approved":
                    with self._policy_lock(name):
                        result = apply_fn()
                    with self._lock:
                        state.status = "approved"
                        state.result = result
                else:
                    # pending at collector timeout counts as rejected
                    with self._lock:
                        state.status = "rejected"
                        state.reason = (
                            "vetoed" if decision.vetoed else "approval threshold not reached"
                        )
            except Exception as e:  # surfaced via change status
                with self._lock:
                    state.status = "rejected"
                    state.reason = f"{type(e).__name__}: {e}"

        threading.Thread(target=_run, daemon=True).start()
        return state

    def change_status(self, change_id: str) -> ChangeState:
        with self._lock:
            if change_id not in self._changes:
                raise NotFoundError(f"no change {change_id!r}")
            return self._changes[change_id]

    def wait_change(self, change_id: str, timeout: float = 30.0) -> ChangeState:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            state = self.change_status(change_id)
            if state.status != "pending":
                return state
            time.sleep(0.005)
        return self.change_status(change_id)

    # -- resolved views -------------------------------------------------------

    def document(self, name: str) -> PolicyDocument:
        return parse_policy(self._record(name)["text"])

    def secrets_of(self, name: str) -> dict[str, str]:
        return self.store.get_secrets(name)

    def importers_of(self, name: str) -> list[str]:
        """Policies that import secrets/volumes or combinations from ``name``."""
        out = []
        for other in self.store.list_policies():
            if other == name:
                continue
            doc = self.document(other)
            if any(imp.policy == name for imp in doc.imports):
                out.append(other)
            elif doc.combinations is not None and doc.combinations.import_from == name:
                out.append(other)
        return sorted(set(out))

    def resolve_imports(self, name: str) -> dict[str, str]:
        """Namespace entries granted to ``name`` by other policies' exports.

        A binding exists only when the source exports to this policy *and*
        this policy declares the import (its board approved that text).
        Volume exports transfer the ``_fspf_key``/``_fspf_tag`` pair.
        """
        doc = self.document(name)
        out: dict[str, str] = {}
        for imp in doc.imports:
            try:
                source = self.document(imp.policy)
            except NotFoundError:
                raise ConfigurationError(
                    f"import source policy {imp.policy!r} does not exist"
                )
            exported = {n for n, target in source.exports() if target == name}
            if imp.name not in exported:
                raise AuthorizationError(
                    f"policy {imp.policy!r} does not export {imp.name!r} to {name!r}"
                )
            source_secrets = self.secrets_of(imp.policy)
            if any(v.name == imp.name for v in source.volumes):
                for suffix in ("_fspf_key", "_fspf_tag"):
                    key = imp.name + suffix
                    if key in source_secrets:
                        out[key] = source_secrets[key]
            elif imp.name in source_secrets:
                out[imp.name] = source_secrets[imp.name]
            else:
                raise ConfigurationError(
                    f"export {imp.name!r} has no materialized value in {imp.policy!r}"
                )
        return out

    def namespace(self, name: str) -> dict[str, str]:
        """Own secrets plus imported bindings; own names win."""
        ns = self.resolve_imports(name)
        ns.update(self.secrets_of(name))
        return ns

    # -- CRUD ------------------------------------------------------------------

    def create(self, name: str, text: str, client_cert: str) -> ChangeState:
        doc = parse_policy(text)
        if doc.name != name:
            raise ConfigurationError(
                f"policy text names {doc.name!r}, request names {name!r}"
            )
        if self.store.get_policy(name) is not None:
            raise ConfigurationError(f"policy {name!r} already exists")
        digest = change_digest("create", name, 0, text)

        def _apply():
            if self.store.get_policy(name) is not None:
                raise ConfigurationError(f"policy {name!r} already exists")
            secrets = materialize_secrets(doc, self.entropy)
            record = {
                "text": text,
                "version": 1,
                "owner_cert": client_cert,
                "created_at": time.time(),
            }
            with self.store.transaction() as state:
                state["policies"][name] = record
                state["secrets"][name] = secrets
                state["audit_log"].append(
                    {
                        "seq": len(state["audit_log"]) + 1,
                        "type": "policy_created",
                        "at": time.time(),
                        "data": {"name": name, "record": record, "secrets": secrets},
                    }
                )
            return {"name": name, "version": 1}

        # creation is approved by the *new* policy's own board
        return self._submit("create", name, doc.board, digest, _apply)

    def read(self, name: str, client_cert: str) -> dict:
        """Metadata read: certificate-gated, no board round."""
        rec = self._require_owner(name, client_cert)
        return {"name": name, "version": rec["version"], "text": rec["text"]}

    def read_secrets(self, name: str, client_cert: str) -> ChangeState:
        """Secret-material read: certificate-gated plus board approval."""
        rec = self._require_owner(name, client_cert)
        doc = parse_policy(rec["text"])
        digest = change_digest("read_secrets", name, rec["version"], "")

        def _apply():
            with self.store.transaction() as state:
                state["audit_log"].append(
                    {
                        "seq": len(state["audit_log"]) + 1,
                        "type": "secrets_read",
                        "at": time.time(),
                        "data": {"name": name},
                    }
                )
            return {"secrets": self.secrets_of(name)}

        return self._submit("read_secrets", name, doc.board, digest, _apply)

    def update(self, name: str, text: str, client_cert: str) -> ChangeState:
        rec = self._require_owner(name, client_cert)
        old_doc = parse_policy(rec["text"])
        new_doc = parse_policy(text)
        if new_doc.name != name:
            raise ConfigurationError(
                f"policy text names {new_doc.name!r}, request names {name!r}"
            )
        digest = change_digest("update", name, rec["version"], text)

        def _apply():
            current = self._record(name)
            old_secrets = self.secrets_of(name)
            new_secrets = materialize_secrets(new_doc, self.entropy, existing=old_secrets)
            record = dict(current)
            record["text"] = text
            record["version"] = current["version"] + 1
            cleared = self._tag_keys_to_clear(name, old_doc, old_secrets, new_doc, new_secrets)
            with self.store.transaction() as state:
                state["policies"][name] = record
                state["secrets"][name] = new_secrets
                for key in cleared:
                    state["tag_records"].pop(key, None)
                state["audit_log"].append(
                    {
                        "seq": len(state["audit_log"]) + 1,
                        "type": "policy_updated",
                        "at": time.time(),
                        "data": {"name": name, "record": record, "secrets": new_secrets},
                    }
                )
                if cleared:
                    state["audit_log"].append(
                        {
                            "seq": len(state["audit_log"]) + 1,
                            "type": "tag_records_cleared",
                            "at": time.time(),
                            "data": {"name": name, "keys": cleared},
                        }
                    )
            if self.on_policy_mutated:
                self.on_policy_mutated(name, "update")
            return {"name": name, "version": record["version"]}

        # updates are approved by the policy's current board
        return self._submit("update", name, old_doc.board, digest, _apply)

    def delete(self, name: str, client_cert: str) -> ChangeState:
        rec = self._require_owner(name, client_cert)
        doc = parse_policy(rec["text"])
        importers = self.importers_of(name)
        if importers:
            raise ConfigurationError(
                f"policy {name!r} has live importers: {', '.join(importers)}"
            )
        digest = change_digest("delete", name, rec["version"], "")

        def _apply():
            with self.store.transaction() as state:
                state["policies"].pop(name, None)
                state["secrets"].pop(name, None)
                dropped = [
                    k for k in state["tag_records"] if k.split("/", 1)[0] == name
                ]
                for k in dropped:
                    del state["tag_records"][k]
                state["audit_log"].append(
                    {
                        "seq": len(state["audit_log"]) + 1,
                        "type": "policy_deleted",
                        "at": time.time(),
                        "data": {"name": name},
                    }
                )
            if self.on_policy_mutated:
                self.on_policy_mutated(name, "delete")
            return {"name": name}

        return self._submit("delete", name, doc.board, digest, _apply)

    # -- helpers ---------------------------------------------------------------

    def _declared_tags(
        self, doc: PolicyDocument, secrets: dict[str, str]
    ) -> dict[tuple[str, str], str]:
        """(service, volume) -> resolved declared tag hex, for update diffing."""
        out: dict[tuple[str, str], str] = {}
        for svc in doc.services:
            for vol_name, _path, _key_ref, tag_ref in _service_volumes(doc, svc):
                try:
                    out[(svc.name, vol_name)] = resolve_ref(tag_ref, secrets)
                except ConfigurationError:
                    continue
        return out

    def _tag_keys_to_clear(
        self,
        name: str,
        old_doc: PolicyDocument,
        old_secrets: dict[str, str],
        new_doc: PolicyDocument,
        new_secrets: dict[str, str],
    ) -> list[str]:
        """A board-approved change to a declared tag resets the stored
        expected tag for that volume (the strict-mode recovery path)."""
        old_tags = self._declared_tags(old_doc, old_secrets)
        new_tags = self._declared_tags(new_doc, new_secrets)
        cleared = []
        for key, tag in new_tags.items():
            if key in old_tags and old_tags[key] != tag:
                svc, vol = key
                cleared.append(f"{name}/{svc}/{vol}")
        return cleared


def _service_volumes(
    doc: PolicyDocument, svc: ServiceSpec
) -> list[tuple[str, str, str, str]]:
    """Volumes a service mounts: (name, mount path, key ref, tag ref).

    The service's image contributes its declared volumes; the service's own
    ``fspf_key``/``fspf_tag`` pair names the root volume when present.
    """
    out = []
    image = doc.image(svc.image_name) if svc.image_name else None
    if image is not None:
        for mount in image.volumes:
            out.append(
                (
                    mount.name,
                    mount.path,
                    f"${mount.name}_fspf_key",
                    f"${mount.name}_fspf_tag",
                )
            )
    if svc.fspf_key and svc.fspf_tag:
        out.append(
            (f"{svc.name}.rootfs", svc.fspf_path or "/", svc.fspf_key, svc.fspf_tag)
        )
    return out
