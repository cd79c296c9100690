"""Untrusted object storage: a desk-scale S3-like server plus its client.

The store authenticates writes by knowledge of a shared write secret or by
a scoped, expiring upload token; neither carries a user identity, so the
access log's ``principal`` column stays empty for anonymous traffic and is
only populated when a request explicitly presents one (``X-User`` header).
Reads are anonymous on public-read buckets, which is the default here:
readers never authenticate and never pass through the monitor.

Objects live as one file per key inside a directory per bucket; each put
replaces the object atomically (temp file + rename), so a concurrent get
sees either the old or the new bytes, never a mix.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx
from fastapi import FastAPI, Header, Request, Response

from .errors import NotFoundError, PermissionDeniedError, TransportError

__all__ = [
    "UploadToken",
    "ObjectStore",
    "CloudStoreClient",
    "create_store_app",
    "issue_upload_token",
]

_TOKEN_CONTEXT = b"asky/upload-token/v1|"
_SAFE_NAME = re.compile(r"^[A-Za-z0-9._-]{1,200}$")


@dataclass(frozen=True)
class UploadToken:
    """Scoped, expiring write credential: valid for one bucket/key pair."""

    bucket: str
    key: str
    expires: float
    mac: bytes

    def encode(self) -> str:
        payload = {"bucket": self.bucket, "key": self.key, "expires": self.expires, "mac": self.mac.hex()}
        return base64.urlsafe_b64encode(json.dumps(payload).encode()).decode("ascii")

    @classmethod
    def decode(cls, token: str) -> "UploadToken":
        try:
            payload = json.loads(base64.urlsafe_b64decode(token.encode("ascii")))
            return cls(
                bucket=payload["bucket"],
                key=payload["key"],
                expires=float(payload["expires"]),
                mac=bytes.fromhex(payload["mac"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise PermissionDeniedError("malformed upload token") from exc


def _token_mac(secret: bytes, bucket: str, key: str, expires: float) -> bytes:
    msg = _TOKEN_CONTEXT + bucket.encode() + b"|" + key.encode() + b"|" + repr(expires).encode()
    return hmac.new(secret, msg, hashlib.sha256).digest()


def issue_upload_token(secret: bytes, bucket: str, key: str, ttl: float = 60.0) -> UploadToken:
    expires = time.time() + ttl
    return UploadToken(bucket=bucket, key=key, expires=expires, mac=_token_mac(secret, bucket, key, expires))


class ObjectStore:
    """Filesystem-backed object store with last-writer-wins puts."""

    def __init__(
        self,
        root: str | Path,
        write_secret: bytes,
        public_read_default: bool = True,
        public_read_overrides: dict[str, bool] | None = None,
        log_path: str | Path | None = None,
    ) -> None:
        self._root = Path(root)
        self._root.mkdir(parents=True, exist_ok=True)
        self._secret = bytes(write_secret)
        self._public_default = public_read_default
        self._public_overrides = dict(public_read_overrides or {})
        self._log_path = Path(log_path) if log_path else self._root / "access_log.jsonl"
        self._log_lock = threading.Lock()
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        self._log_path.touch()

    # -- access log (honest-but-curious observer hook) -------------------------

    def _log(self, operation: str, bucket: str, key: str, principal: str) -> None:
        line = json.dumps(
            {"ts": time.time(), "op": operation, "bucket": bucket, "key": key, "principal": principal}
        )
        with self._log_lock:
            with open(self._log_path, "a") as fh:
                fh.write(line + "\n")

    def access_log(self) -> list[dict]:
        with self._log_lock:
            text = self._log_path.read_text()
        return [json.loads(line) for line in text.splitlines() if line]

    @property
    def log_path(self) -> Path:
        return self._log_path

    # -- object operations ---------------------------------------------------------

    def _object_path(self, bucket: str, key: str) -> Path:
        if not _SAFE_NAME.match(bucket) or not _SAFE_NAME.match(key):
            raise ValueError("bucket and key must be short names of [A-Za-z0-9._-]")
        return self._root / bucket / key

    def _check_write_auth(self, secret: bytes | None, token: str | None, bucket: str, key: str) -> None:
        if secret is not None:
            if hmac.compare_digest(secret, self._secret):
                return
            raise PermissionDeniedError("bad storage credentials")
        if token is not None:
            parsed = UploadToken.decode(token)
            if not hmac.compare_digest(parsed.mac, _token_mac(self._secret, parsed.bucket, parsed.key, parsed.expires)):
                raise PermissionDeniedError("upload token failed verification")
            if time.time() >= parsed.expires:
                raise PermissionDeniedError("upload token expired")
            if parsed.bucket != bucket or parsed.key != key:
                raise PermissionDeniedError("upload token out of scope")
            return
        raise PermissionDeniedError("write requires credentials or an upload token")

    def put_object(
        self,
        bucket: str,
        key: str,
        data: bytes,
        secret: bytes | None = None,
        token: str | None = None,
        principal: str = "",
    ) -> str:
        self._check_write_auth(secret, token, bucket, key)
        path = self._object_path(bucket, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".upload-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self._log("put", bucket, key, principal)
        return hashlib.sha256(data).hexdigest()

    def get_object(self, bucket: str, key: str, principal: str = "") -> bytes:
        if not self._public_overrides.get(bucket, self._public_default):
            raise PermissionDeniedError("bucket is not public-read")
        path = self._object_path(bucket, key)
        if not path.exists():
            self._log("get-miss", bucket, key, principal)
            raise NotFoundError(f"no such object {bucket}/{key}")
        data = path.read_bytes()
        self._log("get", bucket, key, principal)
        return data

    def object_exists(self, bucket: str, key: str) -> bool:
        return self._object_path(bucket, key).exists()

    def list_keys(self, bucket: str) -> list[str]:
        bucket_dir = self._root / bucket
        if not bucket_dir.is_dir():
            return []
        return sorted(p.name for p in bucket_dir.iterdir() if p.is_file() and not p.name.startswith("."))


def create_store_app(store: ObjectStore) -> FastAPI:
    app = FastAPI(title="asky-cloud-store", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.put("/{bucket}/{key}")
    async def put_object(
        bucket: str,
        key: str,
        request: Request,
        response: Response,
        token: str | None = None,
        authorization: str | None = Header(default=None),
        x_user: str | None = Header(default=None),
    ):
        secret = None
        if authorization and authorization.startswith("Bearer "):
            secret = authorization.removeprefix("Bearer ").strip().encode()
        data = await request.body()
        try:
            etag = store.put_object(
                bucket, key, data, secret=secret, token=token, principal=x_user or ""
            )
        except PermissionDeniedError as exc:
            response.status_code = 403
            return {"error": "permission-denied", "detail": str(exc)}
        except ValueError as exc:
            response.status_code = 400
            return {"error": "invalid-request", "detail": str(exc)}
        return {"etag": etag}

    @app.get("/{bucket}/{key}")
    def get_object(
        bucket: str,
        key: str,
        x_user: str | None = Header(default=None),
    ):
        try:
            data = store.get_object(bucket, key, principal=x_user or "")
        except NotFoundError as exc:
            return Response(
                status_code=404,
                content=json.dumps({"error": "not-found", "detail": str(exc)}),
                media_type="application/json",
            )
        except PermissionDeniedError as exc:
            return Response(
                status_code=403,
                content=json.dumps({"error": "permission-denied", "detail": str(exc)}),
                media_type="application/json",
            )
        return Response(content=data, media_type="application/octet-stream")

    return app


class CloudStoreClient:
    """HTTP client for the object store; the reader path uses only this."""

    def __init__(
        self,
        base_url: str = "",
        write_secret: bytes | None = None,
        client: httpx.Client | None = None,
        timeout: float = 30.0,
    ) -> None:
        self._client = client if client is not None else httpx.Client(base_url=base_url, timeout=timeout)
        self._secret = write_secret

    def put_object(self, bucket: str, key: str, data: bytes, principal: str = "") -> str:
        if self._secret is None:
            raise PermissionDeniedError("client has no write credentials")
        headers = {"Authorization": "Bearer " + self._secret.decode()}
        if principal:
            headers["X-User"] = principal
        resp = self._transport_put(f"/{bucket}/{key}", data, headers)
        return self._expect_etag(resp)

    def put_with_token(self, token: UploadToken | str, data: bytes) -> str:
        parsed = token if isinstance(token, UploadToken) else UploadToken.decode(token)
        encoded = parsed.encode()
        resp = self._transport_put(f"/{parsed.bucket}/{parsed.key}?token={encoded}", data, {})
        return self._expect_etag(resp)

    def get_object(self, bucket: str, key: str) -> bytes:
        try:
            resp = self._client.get(f"/{bucket}/{key}")
        except httpx.HTTPError as exc:
            raise TransportError(f"storage unreachable: {exc}") from exc
        if resp.status_code == 404:
            raise NotFoundError(f"no such object {bucket}/{key}")
        if resp.status_code == 403:
            raise PermissionDeniedError(resp.json().get("detail", "forbidden"))
        resp.raise_for_status()
        return resp.content

    def _transport_put(self, url: str, data: bytes, headers: dict) -> httpx.Response:
        try:
            return self._client.put(url, content=data, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"storage unreachable: {exc}") from exc

    def _expect_etag(self, resp: httpx.Response) -> str:
        if resp.status_code == 403:
            raise PermissionDeniedError(resp.json().get("detail", "forbidden"))
        resp.raise_for_status()
        return resp.json()["etag"]
