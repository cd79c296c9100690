"""Key management and group administration service.

The service is the only component that handles user secret keys.  It must
be attested and provisioned with the master key before any other endpoint
answers; administrative operations additionally require a session token
issued during provisioning.  Enveloping requests are served to writers of
the target group by wrapping the submitted file key once per reader.

Instances are stateless apart from the provisioning state, so any number
of them can share one metadata backend.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import threading
from base64 import b64encode
from dataclasses import dataclass

from fastapi import FastAPI, Header
from pydantic import BaseModel

from .attestation import HandshakeHost, open_with_session, seal_with_session
from .backends import KVBackend
from .envelope import (
    Envelope,
    EnvelopeMode,
    build_envelope,
    build_envelope_indexed,
    generate_user_key,
)
from .errors import (
    AttestationError,
    NotProvisionedError,
    PermissionDeniedError,
)
from .http_common import install_error_handlers, install_request_log
from .metastore import ROLE_READER, ROLE_WRITER, MetadataStore

__all__ = [
    "AccessControlConfig",
    "AccessControlService",
    "EnvelopeRequest",
    "ProvisioningState",
    "create_access_control_app",
    "roles_from_names",
    "role_names",
]

_ROLE_BY_NAME = {"reader": ROLE_READER, "writer": ROLE_WRITER}


def roles_from_names(names: list[str]) -> int:
    mask = 0
    for name in names:
        if name not in _ROLE_BY_NAME:
            raise ValueError(f"unknown role {name!r}")
        mask |= _ROLE_BY_NAME[name]
    return mask


def role_names(mask: int) -> list[str]:
    return [name for name, bit in _ROLE_BY_NAME.items() if mask & bit]


@dataclass
class AccessControlConfig:
    allow_reprovision: bool = False
    request_log_path: str | None = None


@dataclass
class ProvisioningState:
    attested: bool
    master_key: bytes
    admin_channel_secret: bytes


@dataclass(frozen=True)
class EnvelopeRequest:
    writer_id: str
    group_id: str
    file_key: bytes
    mode: EnvelopeMode = EnvelopeMode.LINEAR

    def __post_init__(self) -> None:
        if len(self.file_key) != 32:
            raise ValueError("file key must be exactly 32 bytes")


class AccessControlService:
    def __init__(self, backend: KVBackend, config: AccessControlConfig | None = None) -> None:
        self._backend = backend
        self._config = config or AccessControlConfig()
        self._handshake = HandshakeHost()
        self._lock = threading.Lock()
        self._state: ProvisioningState | None = None
        self._store: MetadataStore | None = None
        self._admin_credential_hash: bytes | None = None
        self._session_hashes: set[bytes] = set()

    # -- trust establishment ---------------------------------------------------

    @property
    def measurement(self) -> bytes:
        return self._handshake.measurement

    def attest_begin(self, client_pub: bytes) -> dict:
        return self._handshake.begin(client_pub)

    def attest_complete(self, client_pub: bytes, sealed_hex: str) -> dict:
        """Finish the handshake: install secrets or refresh an admin session."""
        session_key = self._handshake.session_key(client_pub)
        payload = open_with_session(session_key, sealed_hex, b"provision")
        if "admin_credential" not in payload:
            raise AttestationError("provisioning payload lacks the admin credential")
        credential = bytes.fromhex(payload["admin_credential"])
        with self._lock:
            if self._state is None:
                if "master_key" not in payload:
                    raise AttestationError("first provisioning must carry the master key")
                self._install(bytes.fromhex(payload["master_key"]), credential)
            else:
                assert self._admin_credential_hash is not None
                if not hmac_mod.compare_digest(
                    hashlib.sha256(credential).digest(), self._admin_credential_hash
                ):
                    raise AttestationError("admin credential mismatch")
                if "master_key" in payload:
                    if not self._config.allow_reprovision:
                        raise AttestationError("service already provisioned; re-provisioning disabled")
                    self._install(bytes.fromhex(payload["master_key"]), credential)
            session = os.urandom(32)
            self._session_hashes.add(hashlib.sha256(session).digest())
            self._state = ProvisioningState(
                attested=True,
                master_key=self._state.master_key if self._state else b"",
                admin_channel_secret=session,
            )
        return {"sealed": seal_with_session(session_key, {"session": session.hex()}, b"session")}

    def _install(self, master_key: bytes, credential: bytes) -> None:
        self._store = MetadataStore(master_key, self._backend)
        self._admin_credential_hash = hashlib.sha256(credential).digest()
        self._state = ProvisioningState(attested=True, master_key=master_key, admin_channel_secret=b"")

    # -- gates -------------------------------------------------------------------

    def _require_provisioned(self) -> MetadataStore:
        if self._store is None:
            raise NotProvisionedError("service is not attested and provisioned")
        return self._store

    def validate_session(self, token: bytes) -> None:
        self._require_provisioned()
        if hashlib.sha256(token).digest() not in self._session_hashes:
            raise PermissionDeniedError("invalid admin session")

    # -- user management -----------------------------------------------------------

    def create_user(self, uname: str) -> tuple[bytes, bytes]:
        """Create a user; returns (secret key, bootstrap credential), shown once."""
        store = self._require_provisioned()
        usk = generate_user_key()
        store.put_user(uname, usk)
        credential = os.urandom(32)
        store.put_credential(uname, hashlib.sha256(credential).digest())
        return usk, credential

    def fetch_user_key(self, uname: str, credential: bytes) -> bytes:
        store = self._require_provisioned()
        usk = store.get_user_key(uname)
        expected = store.get_credential(uname)
        if not hmac_mod.compare_digest(hashlib.sha256(credential).digest(), expected):
            raise PermissionDeniedError("bad user credential")
        return usk

    # -- group administration ------------------------------------------------------

    def create_group(self, gname: str) -> None:
        self._require_provisioned().create_group(gname)

    def add_user_to_group(self, gname: str, uname: str, roles: int) -> None:
        self._require_provisioned().upsert_member(gname, uname, roles)

    def revoke_user_from_group(self, gname: str, uname: str) -> None:
        self._require_provisioned().remove_member(gname, uname)

    # -- enveloping -------------------------------------------------------------------

    def check_write_permission(self, uname: str, gname: str) -> bool:
        return self._require_provisioned().check_role(gname, uname, ROLE_WRITER)

    def key_enveloping(self, req: EnvelopeRequest) -> Envelope:
        store = self._require_provisioned()
        if not store.check_role(req.group_id, req.writer_id, ROLE_WRITER):
            raise PermissionDeniedError("user is not a writer of this group")
        reader_keys = [usk for _, usk in store.list_member_keys(req.group_id, ROLE_READER)]
        if not reader_keys:
            raise ValueError("empty reader set for group")
        if req.mode is EnvelopeMode.INDEXED:
            return build_envelope_indexed(reader_keys, req.file_key)
        return build_envelope(reader_keys, req.file_key)


# -- HTTP layer -----------------------------------------------------------------------


class AttestBody(BaseModel):
    client_pub: str
    sealed: str | None = None


class NameBody(BaseModel):
    name: str


class MemberBody(BaseModel):
    roles: list[str]


class EnvelopeBody(BaseModel):
    writer: str
    fk: str
    mode: str = "linear"


def _bearer(authorization: str | None) -> bytes:
    if not authorization or not authorization.startswith("Bearer "):
        raise PermissionDeniedError("missing bearer token")
    try:
        return bytes.fromhex(authorization.removeprefix("Bearer ").strip())
    except ValueError:
        raise PermissionDeniedError("malformed bearer token") from None


def create_access_control_app(service: AccessControlService) -> FastAPI:
    app = FastAPI(title="asky-access-control", docs_url=None, redoc_url=None)
    app.state.service = service
    install_error_handlers(app)
    install_request_log(app, service._config.request_log_path)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/attest")
    def attest(body: AttestBody):
        client_pub = bytes.fromhex(body.client_pub)
        if body.sealed is None:
            return service.attest_begin(client_pub)
        return service.attest_complete(client_pub, body.sealed)

    @app.post("/users", status_code=201)
    def create_user(body: NameBody, authorization: str | None = Header(default=None)):
        service.validate_session(_bearer(authorization))
        usk, credential = service.create_user(body.name)
        return {"key": usk.hex(), "credential": credential.hex()}

    @app.get("/users/{uname}/key")
    def fetch_user_key(uname: str, authorization: str | None = Header(default=None)):
        return {"key": service.fetch_user_key(uname, _bearer(authorization)).hex()}

    @app.post("/groups", status_code=201)
    def create_group(body: NameBody, authorization: str | None = Header(default=None)):
        service.validate_session(_bearer(authorization))
        service.create_group(body.name)
        return {"created": body.name}

    @app.put("/groups/{gname}/members/{uname}")
    def put_member(gname: str, uname: str, body: MemberBody, authorization: str | None = Header(default=None)):
        service.validate_session(_bearer(authorization))
        service.add_user_to_group(gname, uname, roles_from_names(body.roles))
        return {"ok": True}

    @app.delete("/groups/{gname}/members/{uname}")
    def delete_member(gname: str, uname: str, authorization: str | None = Header(default=None)):
        service.validate_session(_bearer(authorization))
        service.revoke_user_from_group(gname, uname)
        return {"ok": True}

    @app.post("/groups/{gname}/envelope")
    def envelope(gname: str, body: EnvelopeBody):
        mode = EnvelopeMode.INDEXED if body.mode == "indexed" else EnvelopeMode.LINEAR
        if body.mode not in ("linear", "indexed"):
            raise ValueError(f"unknown mode {body.mode!r}")
        env = service.key_enveloping(
            EnvelopeRequest(writer_id=body.writer, group_id=gname, file_key=bytes.fromhex(body.fk), mode=mode)
        )
        return {"envelope": b64encode(env.to_bytes()).decode("ascii")}

    @app.get("/groups/{gname}/can-write/{uname}")
    def can_write(gname: str, uname: str):
        return {"can_write": service.check_write_permission(uname, gname)}

    return app
