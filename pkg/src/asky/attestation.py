"""Simulated trust establishment for the monitor services.

Hardware attestation is replaced by a software handshake that keeps the
same shape: the service reports a *measurement* (a digest of its own code),
the administrator compares it against the expected value, and the two
sides run an ephemeral X25519 exchange whose derived key is bound to that
measurement.  Provisioning secrets (master key, signing key, storage
credentials) only ever travel sealed under the handshake key, so a service
reporting a different measurement cannot decrypt them.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AttestationError

__all__ = [
    "compute_measurement",
    "AttestationClient",
    "HandshakeHost",
    "seal_with_session",
    "open_with_session",
]

_KDF_INFO = b"asky/attest/v1/"
_HANDSHAKE_TTL = 120.0  # seconds a pending handshake stays answerable

_measurement_cache: bytes | None = None


def compute_measurement() -> bytes:
    """Digest of this package's source files, the stand-in for a code measurement."""
    global _measurement_cache
    if _measurement_cache is None:
        root = Path(__file__).resolve().parent
        h = hashlib.sha256()
        for path in sorted(root.rglob("*.py")):
            h.update(path.relative_to(root).as_posix().encode())
            h.update(b"\x00")
            h.update(path.read_bytes())
        _measurement_cache = h.digest()
    return _measurement_cache


def _derive_session_key(shared: bytes, measurement: bytes, client_pub: bytes, service_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_KDF_INFO + measurement + client_pub + service_pub,
    ).derive(shared)


def seal_with_session(session_key: bytes, payload: dict, context: bytes) -> str:
    iv = os.urandom(12)
    blob = AESGCM(session_key).encrypt(iv, json.dumps(payload).encode(), context)
    return (iv + blob).hex()


def open_with_session(session_key: bytes, sealed_hex: str, context: bytes) -> dict:
    try:
        blob = bytes.fromhex(sealed_hex)
        plaintext = AESGCM(session_key).decrypt(blob[:12], blob[12:], context)
        return json.loads(plaintext)
    except (ValueError, InvalidTag) as exc:
        raise AttestationError("sealed handshake payload failed to open") from exc


@dataclass
class _Pending:
    secret: X25519PrivateKey
    deadline: float


@dataclass
class HandshakeHost:
    """Service side of the handshake; one per service instance."""

    measurement: bytes = field(default_factory=compute_measurement)
    _pending: dict[bytes, _Pending] = field(default_factory=dict)

    def begin(self, client_pub: bytes) -> dict:
        """Phase 1: answer with the measurement and a fresh service key."""
        secret = X25519PrivateKey.generate()
        service_pub = secret.public_key().public_bytes_raw()
        now = time.monotonic()
        self._pending = {
            pub: p for pub, p in self._pending.items() if p.deadline > now
        }
        self._pending[client_pub] = _Pending(secret=secret, deadline=now + _HANDSHAKE_TTL)
        return {"measurement": self.measurement.hex(), "service_pub": service_pub.hex()}

    def session_key(self, client_pub: bytes) -> bytes:
        """Phase 2: derive the session key for an answered handshake."""
        pending = self._pending.pop(client_pub, None)
        if pending is None or pending.deadline < time.monotonic():
            raise AttestationError("no pending handshake for this client key")
        shared = pending.secret.exchange(X25519PublicKey.from_public_bytes(client_pub))
        service_pub = pending.secret.public_key().public_bytes_raw()
        return _derive_session_key(shared, self.measurement, client_pub, service_pub)


class AttestationClient:
    """Administrator side: verify the measurement, derive the session key."""

    def __init__(self, expected_measurement: bytes) -> None:
        self._expected = expected_measurement
        self._secret = X25519PrivateKey.generate()

    @property
    def client_pub(self) -> bytes:
        return self._secret.public_key().public_bytes_raw()

    def complete(self, response: dict) -> bytes:
        """Check the reported measurement and derive the session key.

        Raises:
            AttestationError: the reported measurement differs from the
                expected one; no secret material may be sent.
        """
        measurement = bytes.fromhex(response["measurement"])
        service_pub = bytes.fromhex(response["service_pub"])
        if measurement != self._expected:
            raise AttestationError(
                f"measurement mismatch: got {measurement.hex()[:16]}…, "
                f"expected {self._expected.hex()[:16]}…"
            )
        shared = self._secret.exchange(X25519PublicKey.from_public_bytes(service_pub))
        return _derive_session_key(shared, measurement, self.client_pub, service_pub)
