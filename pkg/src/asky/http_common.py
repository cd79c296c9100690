"""Shared plumbing for the service HTTP layers."""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import (
    AlreadyExistsError,
    AskyError,
    AttestationError,
    IntegrityError,
    NotFoundError,
    NotProvisionedError,
    NotRecipientError,
    PackageFormatError,
    PermissionDeniedError,
    TransportError,
    VersionConflictError,
)

__all__ = ["install_error_handlers", "install_request_log", "raise_for_error", "ERROR_CODES"]

# Wire error codes, stable across services; clients map them back to the
# exception taxonomy.
ERROR_CODES: list[tuple[type[AskyError], str, int]] = [
    (PermissionDeniedError, "permission-denied", 403),
    (AttestationError, "attestation", 403),
    (NotFoundError, "not-found", 404),
    (AlreadyExistsError, "already-exists", 409),
    (VersionConflictError, "version-conflict", 409),
    (NotRecipientError, "not-recipient", 403),
    (PackageFormatError, "package-format", 400),
    (IntegrityError, "integrity", 500),
    (NotProvisionedError, "unprovisioned", 503),
    (TransportError, "transport", 502),
]

_BY_CODE = {code: exc_type for exc_type, code, _ in ERROR_CODES}


def install_error_handlers(app: FastAPI) -> None:
    @app.exception_handler(AskyError)
    async def _asky_error(request: Request, exc: AskyError):
        for exc_type, code, status in ERROR_CODES:
            if isinstance(exc, exc_type):
                return JSONResponse(status_code=status, content={"error": code, "detail": str(exc)})
        return JSONResponse(status_code=500, content={"error": "internal", "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": "invalid-request", "detail": str(exc)})


def raise_for_error(status_code: int, payload: dict) -> None:
    """Convert a service error response back into its typed exception."""
    code = payload.get("error", "")
    detail = payload.get("detail", f"HTTP {status_code}")
    exc_type = _BY_CODE.get(code)
    if exc_type is not None:
        raise exc_type(detail)
    raise AskyError(f"{code or 'unknown error'}: {detail} (HTTP {status_code})")


class _RequestLog:
    def __init__(self, path: Path) -> None:
        self._path = path
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._path.touch()

    def record(self, method: str, path: str) -> None:
        line = json.dumps({"ts": time.time(), "method": method, "path": path})
        with self._lock:
            with open(self._path, "a") as fh:
                fh.write(line + "\n")


def install_request_log(app: FastAPI, path: str | Path | None) -> None:
    """Append one JSONL line per handled request; used by isolation checks."""
    if path is None:
        return
    log = _RequestLog(Path(path))

    @app.middleware("http")
    async def _log_requests(request: Request, call_next):
        log.record(request.method, request.url.path)
        return await call_next(request)
