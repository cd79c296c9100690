"""Outbound write proxy: permission gate, package signing, upload.

Every package leaving through this service is signed with the long-term
authority key after a write-permission check against the access-control
service; the storage provider sees uploads from the service's credentials
with no user identity attached.  A second write path hands the client a
short-lived upload token plus a detached signature over the package digest,
producing byte-identical stored objects:

  stored object = package || sigma(64) || trailer length (2, =64)

Signatures cover SHA-256(package) in both paths, so readers verify one
format regardless of how the object was written.  Permission checks are
performed per request against committed state; nothing is cached, so a
revocation committed before a request's check is always honored.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import threading
from dataclasses import dataclass
from typing import Callable, Protocol

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from fastapi import FastAPI, Header, Request
from pydantic import BaseModel

from .attestation import HandshakeHost, open_with_session, seal_with_session
from .cloud_store import CloudStoreClient, UploadToken, issue_upload_token
from .envelope import (
    attach_signature,
    sign_digest_value,
    sign_package,
    signing_key_from_seed,
    verification_key_bytes,
)
from .errors import (
    AttestationError,
    NotProvisionedError,
    PermissionDeniedError,
)
from .http_common import install_error_handlers, install_request_log

__all__ = ["WriterShieldConfig", "WriterShieldService", "create_writer_shield_app"]


class _StoreLike(Protocol):
    def put_object(self, bucket: str, key: str, data: bytes) -> str: ...


@dataclass
class WriterShieldConfig:
    bucket: str = "asky-data"
    token_ttl: float = 60.0
    # Token-mode clients are responsible for their own network anonymity;
    # deployments that require proxied writes can turn the fast path off.
    allow_token_mode: bool = True
    request_log_path: str | None = None


def _default_store_factory(store_url: str, write_secret: bytes) -> _StoreLike:
    return CloudStoreClient(base_url=store_url, write_secret=write_secret)


class WriterShieldService:
    def __init__(
        self,
        permission_checker: Callable[[str, str], bool],
        config: WriterShieldConfig | None = None,
        store_factory: Callable[[str, bytes], _StoreLike] = _default_store_factory,
    ) -> None:
        self._check = permission_checker
        self._config = config or WriterShieldConfig()
        self._store_factory = store_factory
        self._handshake = HandshakeHost()
        self._lock = threading.Lock()
        self._signing_key: Ed25519PrivateKey | None = None
        self._store: _StoreLike | None = None
        self._write_secret: bytes | None = None
        self._admin_credential_hash: bytes | None = None

    @property
    def config(self) -> WriterShieldConfig:
        return self._config

    # -- provisioning -----------------------------------------------------------

    def attest_begin(self, client_pub: bytes) -> dict:
        return self._handshake.begin(client_pub)

    def attest_complete(self, client_pub: bytes, sealed_hex: str) -> dict:
        session_key = self._handshake.session_key(client_pub)
        payload = open_with_session(session_key, sealed_hex, b"provision")
        if "admin_credential" not in payload:
            raise AttestationError("provisioning payload lacks the admin credential")
        credential = bytes.fromhex(payload["admin_credential"])
        with self._lock:
            if self._admin_credential_hash is not None and not hmac_mod.compare_digest(
                hashlib.sha256(credential).digest(), self._admin_credential_hash
            ):
                raise AttestationError("admin credential mismatch")
            if "signing_key" in payload:
                secret = bytes.fromhex(payload["store_secret"])
                store = self._store_factory(payload["store_url"], secret)
                self._install(signing_key_from_seed(bytes.fromhex(payload["signing_key"])), store, secret)
                self._admin_credential_hash = hashlib.sha256(credential).digest()
            elif self._signing_key is None:
                raise AttestationError("first provisioning must carry key and storage credentials")
        return {
            "sealed": seal_with_session(
                session_key,
                {"verification_key": verification_key_bytes(self._signing_key).hex()},
                b"session",
            )
        }

    def _install(self, signing_key: Ed25519PrivateKey, store: _StoreLike, write_secret: bytes) -> None:
        self._signing_key = signing_key
        self._store = store
        self._write_secret = bytes(write_secret)

    def provision_direct(
        self, signing_key: Ed25519PrivateKey, store: _StoreLike, write_secret: bytes
    ) -> None:
        """In-process provisioning used by deployments that co-host services."""
        with self._lock:
            self._install(signing_key, store, write_secret)

    def _require_provisioned(self) -> tuple[Ed25519PrivateKey, _StoreLike, bytes]:
        if self._signing_key is None or self._store is None or self._write_secret is None:
            raise NotProvisionedError("writer shield is not provisioned")
        return self._signing_key, self._store, self._write_secret

    def verification_key(self) -> bytes:
        key, _, _ = self._require_provisioned()
        return verification_key_bytes(key)

    # -- write paths ----------------------------------------------------------------

    def _require_writer(self, uname: str, gname: str) -> None:
        if not self._check(uname, gname):
            raise PermissionDeniedError("user is not a writer of this group")

    def proxy_file(self, uname: str, gname: str, package: bytes, object_key: str) -> str:
        """Check, sign, upload; the storage request carries no user identity."""
        signing_key, store, _ = self._require_provisioned()
        self._require_writer(uname, gname)
        signed = sign_package(signing_key, package)
        return store.put_object(self._config.bucket, object_key, attach_signature(package, signed.sigma))

    def issue_token(self, uname: str, gname: str, object_key: str) -> UploadToken:
        _, _, secret = self._require_provisioned()
        if not self._config.allow_token_mode:
            raise PermissionDeniedError("token-mode uploads are disabled by policy")
        self._require_writer(uname, gname)
        return issue_upload_token(secret, self._config.bucket, object_key, ttl=self._config.token_ttl)

    def sign_digest(self, uname: str, gname: str, digest: bytes) -> bytes:
        signing_key, _, _ = self._require_provisioned()
        self._require_writer(uname, gname)
        return sign_digest_value(signing_key, digest)


# -- HTTP layer -------------------------------------------------------------------------


class AttestBody(BaseModel):
    client_pub: str
    sealed: str | None = None


class DigestBody(BaseModel):
    digest: str


def _require_user(x_user: str | None) -> str:
    if not x_user:
        raise PermissionDeniedError("request lacks a user identity header")
    return x_user


def create_writer_shield_app(service: WriterShieldService) -> FastAPI:
    app = FastAPI(title="asky-writer-shield", docs_url=None, redoc_url=None)
    app.state.service = service
    install_error_handlers(app)
    install_request_log(app, service.config.request_log_path)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/attest")
    def attest(body: AttestBody):
        client_pub = bytes.fromhex(body.client_pub)
        if body.sealed is None:
            return service.attest_begin(client_pub)
        return service.attest_complete(client_pub, body.sealed)

    @app.post("/proxy/{gname}/{object_key}")
    async def proxy(gname: str, object_key: str, request: Request, x_user: str | None = Header(default=None)):
        package = await request.body()
        etag = service.proxy_file(_require_user(x_user), gname, package, object_key)
        return {"etag": etag}

    @app.post("/tokens/{gname}/{object_key}")
    def token(gname: str, object_key: str, x_user: str | None = Header(default=None)):
        tok = service.issue_token(_require_user(x_user), gname, object_key)
        return {
            "token": tok.encode(),
            "bucket": tok.bucket,
            "key": tok.key,
            "expires": tok.expires,
        }

    @app.post("/sign-digest/{gname}")
    def sign_digest(gname: str, body: DigestBody, x_user: str | None = Header(default=None)):
        digest = bytes.fromhex(body.digest)
        return {"signature": service.sign_digest(_require_user(x_user), gname, digest).hex()}

    @app.get("/verification-key")
    def verification_key():
        return {"verification_key": service.verification_key().hex()}

    return app
