"""End-user and administrator clients.

``UserClient`` implements the two user flows: writing a file to a group
(fresh file key, enveloping via the access-control service, upload through
the writer shield or via an upload token) and reading one (download from
storage, verify the authority signature before touching any ciphertext,
open the envelope, decrypt).  The read path talks to the object store only;
it never contacts the monitor services.

``AccessControlClient`` / ``WriterShieldClient`` wrap the service HTTP APIs
and perform the administrator-side attestation handshake: compare the
service's reported measurement against the expected one, then push the
provisioning secrets sealed under the handshake key.
"""

from __future__ import annotations

import base64
import hashlib
import stat
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .attestation import AttestationClient, compute_measurement, open_with_session, seal_with_session
from .cloud_store import CloudStoreClient, UploadToken
from .envelope import (
    DecryptStats,
    Envelope,
    attach_signature,
    decrypt_content,
    encrypt_content,
    frame_package,
    generate_file_key,
    open_envelope,
    package_digest,
    split_package,
    split_signed_object,
    verification_key_from_bytes,
    verify_package_bytes,
)
from .errors import (
    AskyError,
    IntegrityError,
    NotRecipientError,
    PermissionDeniedError,
    TransportError,
)
from .http_common import raise_for_error

__all__ = [
    "ClientConfig",
    "AccessControlClient",
    "WriterShieldClient",
    "UserClient",
    "load_config",
    "save_key_file",
    "load_key_file",
]

_TRANSPORT_ATTEMPTS = 3
_RETRY_DELAY = 0.2


def _check_endpoint(url: str, allow_plaintext: bool) -> str:
    if url and not url.startswith("https://") and not allow_plaintext:
        raise ValueError(
            f"endpoint {url!r} is not an encrypted transport; "
            "set allow_plaintext=true only for loopback testing"
        )
    return url


@dataclass
class ClientConfig:
    """Client-side settings; see ``load_config`` for the key=value file format."""

    access_control_url: str = ""
    writer_shield_url: str = ""
    storage_url: str = ""
    user: str = ""
    key_file: str = ""
    verify_key: str = ""  # hex of the authority verification key
    bucket: str = "asky-data"
    indexed: bool = False
    token_mode: bool = False
    allow_plaintext: bool = False

    def validate_endpoints(self) -> None:
        for url in (self.access_control_url, self.writer_shield_url, self.storage_url):
            _check_endpoint(url, self.allow_plaintext)


_BOOL_KEYS = {"indexed", "token_mode", "allow_plaintext"}


def load_config(path: str | Path) -> ClientConfig:
    """Parse a key=value config file ('#' starts a comment)."""
    config = ClientConfig()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not hasattr(config, key):
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _BOOL_KEYS:
            setattr(config, key, value.lower() in ("1", "true", "yes", "on"))
        else:
            setattr(config, key, value)
    config.validate_endpoints()
    return config


def save_key_file(path: str | Path, key: bytes) -> None:
    path = Path(path)
    path.write_text(key.hex() + "\n")
    path.chmod(0o600)


def load_key_file(path: str | Path) -> bytes:
    path = Path(path)
    mode = stat.S_IMODE(path.stat().st_mode)
    if mode & 0o077:
        raise PermissionDeniedError(
            f"key file {path} is readable by other users (mode {mode:o}); chmod 600 it"
        )
    return bytes.fromhex(path.read_text().strip())


def _retrying(call):
    """Run a transport call, retrying twice more on transport-level failure."""
    last: TransportError | None = None
    for attempt in range(_TRANSPORT_ATTEMPTS):
        try:
            return call()
        except TransportError as exc:
            last = exc
            if attempt < _TRANSPORT_ATTEMPTS - 1:
                time.sleep(_RETRY_DELAY * (attempt + 1))
    assert last is not None
    raise last


class _ServiceClient:
    def __init__(self, base_url: str = "", client: httpx.Client | None = None, timeout: float = 30.0) -> None:
        self._client = client if client is not None else httpx.Client(base_url=base_url, timeout=timeout)

    def _request(self, method: str, url: str, **kwargs) -> dict:
        def call():
            try:
                resp = self._client.request(method, url, **kwargs)
            except httpx.HTTPError as exc:
                raise TransportError(f"{method} {url}: {exc}") from exc
            payload = resp.json() if resp.content else {}
            if resp.status_code >= 400:
                raise_for_error(resp.status_code, payload)
            return payload

        return _retrying(call)

    def _attest_handshake(self, expected_measurement: bytes, payload: dict) -> dict:
        """Two-phase handshake: verify measurement, then push sealed payload."""
        attester = AttestationClient(expected_measurement)
        first = self._request("POST", "/attest", json={"client_pub": attester.client_pub.hex()})
        session_key = attester.complete(first)
        sealed = seal_with_session(session_key, payload, b"provision")
        second = self._request(
            "POST", "/attest", json={"client_pub": attester.client_pub.hex(), "sealed": sealed}
        )
        return open_with_session(session_key, second["sealed"], b"session")

    def fetch_measurement(self) -> bytes:
        attester = AttestationClient(b"\x00" * 32)
        first = self._request("POST", "/attest", json={"client_pub": attester.client_pub.hex()})
        return bytes.fromhex(first["measurement"])


class AccessControlClient(_ServiceClient):
    def __init__(self, base_url: str = "", client: httpx.Client | None = None, session: bytes | None = None) -> None:
        super().__init__(base_url, client)
        self._session = session

    def attest_and_provision(
        self,
        master_key: bytes,
        admin_credential: bytes,
        expected_measurement: bytes | None = None,
    ) -> bytes:
        """Verify the service, install the master key, keep the admin session."""
        expected = expected_measurement if expected_measurement is not None else compute_measurement()
        result = self._attest_handshake(
            expected,
            {"master_key": master_key.hex(), "admin_credential": admin_credential.hex()},
        )
        self._session = bytes.fromhex(result["session"])
        return self._session

    def attest_session(self, admin_credential: bytes, expected_measurement: bytes | None = None) -> bytes:
        """Re-attest an already provisioned service and obtain a fresh session."""
        expected = expected_measurement if expected_measurement is not None else compute_measurement()
        result = self._attest_handshake(expected, {"admin_credential": admin_credential.hex()})
        self._session = bytes.fromhex(result["session"])
        return self._session

    @property
    def session(self) -> bytes | None:
        return self._session

    def use_session(self, session: bytes) -> None:
        self._session = session

    def _admin_headers(self) -> dict:
        if self._session is None:
            raise PermissionDeniedError("no admin session; run attest/provision first")
        return {"Authorization": "Bearer " + self._session.hex()}

    def create_user(self, uname: str) -> tuple[bytes, bytes]:
        payload = self._request("POST", "/users", json={"name": uname}, headers=self._admin_headers())
        return bytes.fromhex(payload["key"]), bytes.fromhex(payload["credential"])

    def fetch_user_key(self, uname: str, credential: bytes) -> bytes:
        payload = self._request(
            "GET", f"/users/{uname}/key", headers={"Authorization": "Bearer " + credential.hex()}
        )
        return bytes.fromhex(payload["key"])

    def create_group(self, gname: str) -> None:
        self._request("POST", "/groups", json={"name": gname}, headers=self._admin_headers())

    def add_member(self, gname: str, uname: str, roles: list[str]) -> None:
        self._request(
            "PUT", f"/groups/{gname}/members/{uname}", json={"roles": roles}, headers=self._admin_headers()
        )

    def revoke_member(self, gname: str, uname: str) -> None:
        self._request("DELETE", f"/groups/{gname}/members/{uname}", headers=self._admin_headers())

    def key_enveloping(self, writer: str, gname: str, fk: bytes, indexed: bool = False) -> Envelope:
        payload = self._request(
            "POST",
            f"/groups/{gname}/envelope",
            json={"writer": writer, "fk": fk.hex(), "mode": "indexed" if indexed else "linear"},
        )
        return Envelope.from_bytes(base64.b64decode(payload["envelope"]))

    def can_write(self, uname: str, gname: str) -> bool:
        return self._request("GET", f"/groups/{gname}/can-write/{uname}")["can_write"]


class WriterShieldClient(_ServiceClient):
    def attest_and_provision(
        self,
        signing_seed: bytes,
        store_url: str,
        store_secret: bytes,
        admin_credential: bytes,
        expected_measurement: bytes | None = None,
    ) -> bytes:
        """Provision the shield; returns the authority verification key."""
        expected = expected_measurement if expected_measurement is not None else compute_measurement()
        result = self._attest_handshake(
            expected,
            {
                "signing_key": signing_seed.hex(),
                "store_url": store_url,
                "store_secret": store_secret.hex(),
                "admin_credential": admin_credential.hex(),
            },
        )
        return bytes.fromhex(result["verification_key"])

    def proxy_file(self, uname: str, gname: str, package: bytes, object_key: str) -> str:
        payload = self._request(
            "POST",
            f"/proxy/{gname}/{object_key}",
            content=package,
            headers={"X-User": uname, "Content-Type": "application/octet-stream"},
        )
        return payload["etag"]

    def issue_token(self, uname: str, gname: str, object_key: str) -> UploadToken:
        payload = self._request("POST", f"/tokens/{gname}/{object_key}", headers={"X-User": uname})
        return UploadToken.decode(payload["token"])

    def sign_digest(self, uname: str, gname: str, digest: bytes) -> bytes:
        payload = self._request(
            "POST", f"/sign-digest/{gname}", json={"digest": digest.hex()}, headers={"X-User": uname}
        )
        return bytes.fromhex(payload["signature"])

    def verification_key(self) -> bytes:
        return bytes.fromhex(self._request("GET", "/verification-key")["verification_key"])


@dataclass
class UserClient:
    """Write and read group files under one configured identity."""

    config: ClientConfig
    user_key: bytes = b""
    access_control: AccessControlClient | None = None
    writer_shield: WriterShieldClient | None = None
    storage: CloudStoreClient | None = None
    last_read_stats: DecryptStats = field(default_factory=DecryptStats)

    def __post_init__(self) -> None:
        self.config.validate_endpoints()
        if not self.user_key and self.config.key_file:
            self.user_key = load_key_file(self.config.key_file)
        if self.storage is None:
            self.storage = CloudStoreClient(base_url=self.config.storage_url)

    def _access_control(self) -> AccessControlClient:
        if self.access_control is None:
            self.access_control = AccessControlClient(self.config.access_control_url)
        return self.access_control

    def _writer_shield(self) -> WriterShieldClient:
        if self.writer_shield is None:
            self.writer_shield = WriterShieldClient(self.config.writer_shield_url)
        return self.writer_shield

    def _verify_key(self):
        if not self.config.verify_key:
            raise AskyError("client config lacks the authority verification key")
        return verification_key_from_bytes(bytes.fromhex(self.config.verify_key))

    # -- write ------------------------------------------------------------------

    def write_bytes(self, group: str, plaintext: bytes) -> str:
        """Encrypt and publish; returns the storage object key."""
        fk = generate_file_key()
        env = self._access_control().key_enveloping(
            self.config.user, group, fk, indexed=self.config.indexed
        )
        cipher = encrypt_content(fk, plaintext)
        package = frame_package(env, cipher)
        object_key = hashlib.sha256(package).hexdigest()
        shield = self._writer_shield()
        if self.config.token_mode:
            sigma = shield.sign_digest(self.config.user, group, package_digest(package))
            token = shield.issue_token(self.config.user, group, object_key)
            assert self.storage is not None
            self.storage.put_with_token(token, attach_signature(package, sigma))
        else:
            shield.proxy_file(self.config.user, group, package, object_key)
        return object_key

    def write_file(self, group: str, path: str | Path) -> str:
        return self.write_bytes(group, Path(path).read_bytes())

    # -- read -------------------------------------------------------------------
    #
    # Touches only the object store; signature verification happens before
    # any envelope or content decryption is attempted.

    def read_bytes(self, object_key: str, stats: DecryptStats | None = None) -> bytes:
        stats = stats if stats is not None else self.last_read_stats
        stats.reset()
        assert self.storage is not None
        blob = _retrying(lambda: self.storage.get_object(self.config.bucket, object_key))
        package, sigma = split_signed_object(blob)
        if not verify_package_bytes(self._verify_key(), package, sigma):
            raise IntegrityError("unauthenticated content")
        env, cipher = split_package(package)
        fk = open_envelope(self.user_key, env, stats)
        if fk is None:
            raise NotRecipientError("not a recipient")
        return decrypt_content(fk, cipher)

    def read_file(self, object_key: str, out_path: str | Path, stats: DecryptStats | None = None) -> None:
        Path(out_path).write_bytes(self.read_bytes(object_key, stats))
