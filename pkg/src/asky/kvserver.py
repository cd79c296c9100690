"""HTTP front end for a KV backend.

Lets several access-control instances share one logical metadata store, the
desk-scale stand-in for a replicated document database.  The payloads it
serves are sealed by the callers, so this process never sees plaintext.
"""

from __future__ import annotations

import base64

from fastapi import FastAPI, Response
from pydantic import BaseModel

from .backends import KVBackend, MemoryBackend
from .errors import VersionConflictError

__all__ = ["create_kv_app"]


class PutRequest(BaseModel):
    data: str  # base64
    expected_version: int


def create_kv_app(backend: KVBackend | None = None) -> FastAPI:
    backend = backend if backend is not None else MemoryBackend()
    app = FastAPI(title="asky-kv", docs_url=None, redoc_url=None)
    app.state.backend = backend

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/kv")
    def dump():
        return {
            "items": [
                {"key": k, "version": v, "data": base64.b64encode(d).decode("ascii")}
                for k, d, v in backend.items()
            ]
        }

    @app.get("/kv/{key}")
    def get_key(key: str, response: Response):
        found = backend.get(key)
        if found is None:
            response.status_code = 404
            return {"detail": "not found"}
        data, version = found
        return {"version": version, "data": base64.b64encode(data).decode("ascii")}

    @app.put("/kv/{key}")
    def put_key(key: str, body: PutRequest, response: Response):
        try:
            version = backend.put_if_version(key, base64.b64decode(body.data), body.expected_version)
        except VersionConflictError as exc:
            response.status_code = 409
            return {"detail": str(exc)}
        return {"version": version}

    @app.delete("/kv/{key}")
    def delete_key(key: str):
        return {"deleted": backend.delete(key)}

    return app
