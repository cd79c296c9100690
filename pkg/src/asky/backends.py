"""Versioned key-value backends for the sealed metadata store.

Three interchangeable implementations of one contract:

  * :class:`MemoryBackend` — in-process dict, the default for tests.
  * :class:`FileBackend` — append-only log with CRC-protected records and an
    in-memory index; survives restarts, detects on-disk corruption at load.
  * :class:`HttpKVBackend` — client for the bundled KV service
    (:mod:`asky.kvserver`), which lets several service instances share one
    logical store.

All writes go through compare-and-swap on a per-key version: pass
``expected_version=0`` to create, or the version you read to replace.
"""

from __future__ import annotations

import base64
import io
import struct
import threading
import zlib
from abc import ABC, abstractmethod
from pathlib import Path

import httpx

from .errors import IntegrityError, TransportError, VersionConflictError

__all__ = ["KVBackend", "MemoryBackend", "FileBackend", "HttpKVBackend"]


class KVBackend(ABC):
    """Versioned blob store: get / put-if-version / delete."""

    @abstractmethod
    def get(self, key: str) -> tuple[bytes, int] | None:
        """Return (data, version) or ``None`` when absent."""

    @abstractmethod
    def put_if_version(self, key: str, data: bytes, expected_version: int) -> int:
        """Store ``data`` iff the current version matches; return the new one.

        Raises:
            VersionConflictError: stored version differs from ``expected_version``
                (including create attempts on existing keys).
        """

    @abstractmethod
    def delete(self, key: str) -> bool:
        """Remove a key; ``False`` when it was absent."""

    @abstractmethod
    def items(self) -> list[tuple[str, bytes, int]]:
        """Snapshot of (key, data, version); used by audits and tests."""


class MemoryBackend(KVBackend):
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._data: dict[str, tuple[bytes, int]] = {}

    def get(self, key: str) -> tuple[bytes, int] | None:
        with self._lock:
            return self._data.get(key)

    def put_if_version(self, key: str, data: bytes, expected_version: int) -> int:
        with self._lock:
            current = self._data.get(key)
            current_version = current[1] if current else 0
            if current_version != expected_version:
                raise VersionConflictError(
                    f"version mismatch for {key!r}: have {current_version}, expected {expected_version}"
                )
            new_version = current_version + 1
            self._data[key] = (bytes(data), new_version)
            return new_version

    def delete(self, key: str) -> bool:
        with self._lock:
            return self._data.pop(key, None) is not None

    def items(self) -> list[tuple[str, bytes, int]]:
        with self._lock:
            return [(k, d, v) for k, (d, v) in self._data.items()]


# Log record: crc32(4) | op(1) | klen(2) | key | version(8) | dlen(4) | data
_RECORD_HEADER = struct.Struct(">IBH")
_OP_PUT, _OP_DELETE = 0, 1


class FileBackend(KVBackend):
    """Append-only log file with an in-memory index.

    Every record carries a CRC32 over its body, so any on-disk bit flip is
    reported as an :class:`IntegrityError` when the log is reopened.
    Single-process use; cross-process sharing goes through the KV service.
    """

    def __init__(self, path: str | Path) -> None:
        self._path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[str, tuple[bytes, int]] = {}
        self._path.parent.mkdir(parents=True, exist_ok=True)
        if self._path.exists():
            self._replay()
        self._fh = open(self._path, "ab")

    def _replay(self) -> None:
        raw = self._path.read_bytes()
        buf = io.BytesIO(raw)
        while True:
            header = buf.read(_RECORD_HEADER.size)
            if not header:
                break
            if len(header) < _RECORD_HEADER.size:
                raise IntegrityError(f"truncated record header in {self._path}")
            crc, op, klen = _RECORD_HEADER.unpack(header)
            body = buf.read(klen + 8 + 4)
            if len(body) < klen + 12:
                raise IntegrityError(f"truncated record in {self._path}")
            key_bytes, version_bytes, dlen_bytes = body[:klen], body[klen : klen + 8], body[klen + 8 :]
            dlen = struct.unpack(">I", dlen_bytes)[0]
            data = buf.read(dlen)
            if len(data) < dlen:
                raise IntegrityError(f"truncated record payload in {self._path}")
            if zlib.crc32(bytes([op]) + struct.pack(">H", klen) + body + data) != crc:
                raise IntegrityError(f"corrupt record (crc mismatch) in {self._path}")
            key = key_bytes.decode("utf-8")
            version = struct.unpack(">Q", version_bytes)[0]
            if op == _OP_DELETE:
                self._index.pop(key, None)
            else:
                self._index[key] = (data, version)

    def _append(self, op: int, key: str, version: int, data: bytes) -> None:
        key_bytes = key.encode("utf-8")
        body = struct.pack(">H", len(key_bytes)) + key_bytes + struct.pack(">Q", version)
        body += struct.pack(">I", len(data)) + data
        record_body = bytes([op]) + body
        self._fh.write(struct.pack(">I", zlib.crc32(record_body)) + record_body)
        self._fh.flush()

    def get(self, key: str) -> tuple[bytes, int] | None:
        with self._lock:
            return self._index.get(key)

    def put_if_version(self, key: str, data: bytes, expected_version: int) -> int:
        with self._lock:
            current = self._index.get(key)
            current_version = current[1] if current else 0
            if current_version != expected_version:
                raise VersionConflictError(
                    f"version mismatch for {key!r}: have {current_version}, expected {expected_version}"
                )
            new_version = current_version + 1
            self._append(_OP_PUT, key, new_version, bytes(data))
            self._index[key] = (bytes(data), new_version)
            return new_version

    def delete(self, key: str) -> bool:
        with self._lock:
            if key not in self._index:
                return False
            self._append(_OP_DELETE, key, 0, b"")
            del self._index[key]
            return True

    def items(self) -> list[tuple[str, bytes, int]]:
        with self._lock:
            return [(k, d, v) for k, (d, v) in self._index.items()]

    def close(self) -> None:
        self._fh.close()


class HttpKVBackend(KVBackend):
    """Client for the shared KV service (see :mod:`asky.kvserver`)."""

    def __init__(self, base_url: str = "", timeout: float = 10.0, client: httpx.Client | None = None) -> None:
        self._client = client if client is not None else httpx.Client(base_url=base_url, timeout=timeout)

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        try:
            return self._client.request(method, url, **kwargs)
        except httpx.HTTPError as exc:
            raise TransportError(f"kv backend unreachable: {exc}") from exc

    def get(self, key: str) -> tuple[bytes, int] | None:
        resp = self._request("GET", f"/kv/{key}")
        if resp.status_code == 404:
            return None
        resp.raise_for_status()
        payload = resp.json()
        return base64.b64decode(payload["data"]), payload["version"]

    def put_if_version(self, key: str, data: bytes, expected_version: int) -> int:
        resp = self._request(
            "PUT",
            f"/kv/{key}",
            json={"data": base64.b64encode(data).decode("ascii"), "expected_version": expected_version},
        )
        if resp.status_code == 409:
            raise VersionConflictError(resp.json().get("detail", "version conflict"))
        resp.raise_for_status()
        return resp.json()["version"]

    def delete(self, key: str) -> bool:
        resp = self._request("DELETE", f"/kv/{key}")
        resp.raise_for_status()
        return resp.json()["deleted"]

    def items(self) -> list[tuple[str, bytes, int]]:
        resp = self._request("GET", "/kv")
        resp.raise_for_status()
        return [
            (item["key"], base64.b64decode(item["data"]), item["version"])
            for item in resp.json()["items"]
        ]

    def close(self) -> None:
        self._client.close()
