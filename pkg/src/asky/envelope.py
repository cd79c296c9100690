"""Symmetric anonymous key-enveloping core.

A group write wraps a fresh 32-byte file key once per authorized reader
using AES-256-GCM under that reader's personal secret key.  The resulting
fragments form an *envelope* that carries no recipient identities: a reader
either trial-decrypts fragments (linear mode) or locates its own fragment
through a salted-hash label and a binary search (indexed mode).

Wire formats (all integers big-endian):

  fragment        iv(12) || ct(32) || tag(16)                      = 60 B
  linear envelope  0x01 || 0x00 || count(4) || count * fragment    = 6 + 60n
  indexed envelope 0x01 || 0x01 || count(4) || nonce(16)
                   || count * (label(28) || fragment)              = 22 + 88n
  content cipher   iv(12) || ct || tag(16)                         = len + 28
  package          envlen(4) || envelope || cipher
  signed object    package || sigma(64) || trailer_len(2, =64)

Indexed entries are sorted ascending by label bytes, ties broken by
fragment bytes.  Labels are SHA-224(user_key || nonce).  Signatures are
Ed25519 over the SHA-256 digest of the package bytes, so a detached
signature over a precomputed digest verifies identically.
"""

from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass
from enum import IntEnum

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import DecryptionError, PackageFormatError

__all__ = [
    "USER_KEY_SIZE",
    "FILE_KEY_SIZE",
    "FRAGMENT_SIZE",
    "LABEL_SIZE",
    "ENVELOPE_NONCE_SIZE",
    "LINEAR_HEADER_SIZE",
    "INDEXED_HEADER_SIZE",
    "CONTENT_OVERHEAD",
    "SIGNATURE_SIZE",
    "EnvelopeMode",
    "Fragment",
    "Envelope",
    "DecryptStats",
    "SignedPackage",
    "generate_user_key",
    "generate_file_key",
    "seal_fragment",
    "open_fragment",
    "compute_label",
    "build_envelope",
    "build_envelope_indexed",
    "open_envelope",
    "open_envelope_linear",
    "open_envelope_indexed",
    "encrypt_content",
    "decrypt_content",
    "frame_package",
    "split_package",
    "new_signing_key",
    "signing_key_from_seed",
    "verification_key_bytes",
    "verification_key_from_bytes",
    "package_digest",
    "sign_package",
    "sign_digest_value",
    "verify_package",
    "verify_package_bytes",
    "attach_signature",
    "split_signed_object",
]

USER_KEY_SIZE = 32
FILE_KEY_SIZE = 32
AE_IV_SIZE = 12
AE_TAG_SIZE = 16
FRAGMENT_SIZE = AE_IV_SIZE + FILE_KEY_SIZE + AE_TAG_SIZE  # 60
LABEL_SIZE = 28  # SHA-224 digest
ENVELOPE_NONCE_SIZE = 16
LINEAR_HEADER_SIZE = 6
INDEXED_HEADER_SIZE = LINEAR_HEADER_SIZE + ENVELOPE_NONCE_SIZE  # 22
CONTENT_OVERHEAD = AE_IV_SIZE + AE_TAG_SIZE  # 28
SIGNATURE_SIZE = 64
SIGNATURE_TRAILER_SIZE = SIGNATURE_SIZE + 2

_ENVELOPE_VERSION = 0x01

# Fragment order must be a fresh uniform permutation so position leaks no
# membership ordering; SystemRandom draws from the OS entropy source and is
# thread-safe.
_sysrand = random.SystemRandom()


class EnvelopeMode(IntEnum):
    LINEAR = 0x00
    INDEXED = 0x01


def generate_user_key() -> bytes:
    """Fresh 32-byte user secret key from the OS entropy source."""
    return os.urandom(USER_KEY_SIZE)


def generate_file_key() -> bytes:
    """Fresh 32-byte symmetric content key."""
    return os.urandom(FILE_KEY_SIZE)


def _check_key(key: bytes, what: str) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != USER_KEY_SIZE:
        raise ValueError(f"{what} must be exactly {USER_KEY_SIZE} bytes")


@dataclass(frozen=True)
class Fragment:
    """One recipient's AES-256-GCM wrap of the file key; 60 bytes serialized."""

    iv: bytes
    ct: bytes
    tag: bytes

    def __post_init__(self) -> None:
        if len(self.iv) != AE_IV_SIZE or len(self.ct) != FILE_KEY_SIZE or len(self.tag) != AE_TAG_SIZE:
            raise ValueError("fragment parts must be 12/32/16 bytes")

    def to_bytes(self) -> bytes:
        return self.iv + self.ct + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "Fragment":
        if len(data) != FRAGMENT_SIZE:
            raise PackageFormatError(f"fragment must be {FRAGMENT_SIZE} bytes, got {len(data)}")
        return cls(iv=data[:12], ct=data[12:44], tag=data[44:60])


def seal_fragment(usk: bytes, fk: bytes) -> Fragment:
    """Wrap a file key for one recipient; fresh random iv per call."""
    _check_key(usk, "user key")
    _check_key(fk, "file key")
    iv = os.urandom(AE_IV_SIZE)
    blob = AESGCM(bytes(usk)).encrypt(iv, bytes(fk), None)
    return Fragment(iv=iv, ct=blob[:-AE_TAG_SIZE], tag=blob[-AE_TAG_SIZE:])


def open_fragment(usk: bytes, fragment: Fragment) -> bytes | None:
    """Unwrap a fragment; ``None`` when the tag rejects this key.

    The ``None`` result is the expected outcome for every fragment that was
    sealed for a different member, and drives the linear decryption trials.
    """
    _check_key(usk, "user key")
    try:
        return AESGCM(bytes(usk)).decrypt(fragment.iv, fragment.ct + fragment.tag, None)
    except InvalidTag:
        return None


def compute_label(usk: bytes, nonce: bytes) -> bytes:
    """Per-recipient fragment locator: SHA-224 of user key salted by nonce."""
    _check_key(usk, "user key")
    if len(nonce) != ENVELOPE_NONCE_SIZE:
        raise ValueError(f"nonce must be {ENVELOPE_NONCE_SIZE} bytes")
    return hashlib.sha224(bytes(usk) + bytes(nonce)).digest()


@dataclass(frozen=True)
class Envelope:
    """Anonymous key-wrap ciphertext for a set of recipients.

    ``labels`` is ``None`` in linear mode; in indexed mode it is parallel to
    ``fragments`` and strictly sorted ascending by (label, fragment bytes).
    """

    mode: EnvelopeMode
    fragments: tuple[Fragment, ...]
    labels: tuple[bytes, ...] | None = None
    nonce: bytes | None = None

    @property
    def member_count(self) -> int:
        return len(self.fragments)

    def serialized_size(self) -> int:
        if self.mode is EnvelopeMode.LINEAR:
            return LINEAR_HEADER_SIZE + FRAGMENT_SIZE * len(self.fragments)
        return INDEXED_HEADER_SIZE + (LABEL_SIZE + FRAGMENT_SIZE) * len(self.fragments)

    def to_bytes(self) -> bytes:
        parts = [bytes([_ENVELOPE_VERSION, self.mode.value]), len(self.fragments).to_bytes(4, "big")]
        if self.mode is EnvelopeMode.INDEXED:
            assert self.nonce is not None and self.labels is not None
            parts.append(self.nonce)
            for label, frag in zip(self.labels, self.fragments):
                parts.append(label)
                parts.append(frag.to_bytes())
        else:
            for frag in self.fragments:
                parts.append(frag.to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        if len(data) < LINEAR_HEADER_SIZE:
            raise PackageFormatError("envelope shorter than header")
        if data[0] != _ENVELOPE_VERSION:
            raise PackageFormatError(f"unsupported envelope version {data[0]:#x}")
        try:
            mode = EnvelopeMode(data[1])
        except ValueError:
            raise PackageFormatError(f"unknown envelope mode byte {data[1]:#x}") from None
        count = int.from_bytes(data[2:6], "big")
        if mode is EnvelopeMode.LINEAR:
            expected = LINEAR_HEADER_SIZE + FRAGMENT_SIZE * count
            if len(data) != expected:
                raise PackageFormatError(f"linear envelope length {len(data)} != {expected}")
            frags = tuple(
                Fragment.from_bytes(data[off : off + FRAGMENT_SIZE])
                for off in range(LINEAR_HEADER_SIZE, expected, FRAGMENT_SIZE)
            )
            return cls(mode=mode, fragments=frags)
        expected = INDEXED_HEADER_SIZE + (LABEL_SIZE + FRAGMENT_SIZE) * count
        if len(data) != expected:
            raise PackageFormatError(f"indexed envelope length {len(data)} != {expected}")
        nonce = data[LINEAR_HEADER_SIZE:INDEXED_HEADER_SIZE]
        labels = []
        frags = []
        off = INDEXED_HEADER_SIZE
        for _ in range(count):
            labels.append(data[off : off + LABEL_SIZE])
            off += LABEL_SIZE
            frags.append(Fragment.from_bytes(data[off : off + FRAGMENT_SIZE]))
            off += FRAGMENT_SIZE
        return cls(mode=mode, fragments=tuple(frags), labels=tuple(labels), nonce=nonce)


def build_envelope(member_keys: list[bytes], fk: bytes) -> Envelope:
    """Linear envelope: one fragment per member, in fresh random order."""
    if not member_keys:
        raise ValueError("empty reader set")
    fragments = [seal_fragment(usk, fk) for usk in member_keys]
    _sysrand.shuffle(fragments)
    return Envelope(mode=EnvelopeMode.LINEAR, fragments=tuple(fragments))


def build_envelope_indexed(member_keys: list[bytes], fk: bytes) -> Envelope:
    """Indexed envelope: fresh 16-byte nonce, entries sorted by label."""
    if not member_keys:
        raise ValueError("empty reader set")
    nonce = os.urandom(ENVELOPE_NONCE_SIZE)
    entries = []
    for usk in member_keys:
        frag = seal_fragment(usk, fk)
        entries.append((compute_label(usk, nonce), frag))
    # Ties (label collisions) are ordered by fragment bytes so the encoding
    # is canonical; the reader trial-decrypts every equal-label fragment.
    entries.sort(key=lambda e: (e[0], e[1].to_bytes()))
    return Envelope(
        mode=EnvelopeMode.INDEXED,
        fragments=tuple(f for _, f in entries),
        labels=tuple(l for l, _ in entries),
        nonce=nonce,
    )


@dataclass
class DecryptStats:
    """Instrumentation for the read path: work performed per open attempt."""

    ae_decryptions: int = 0
    label_comparisons: int = 0

    def reset(self) -> None:
        self.ae_decryptions = 0
        self.label_comparisons = 0


def open_envelope_linear(usk: bytes, env: Envelope, stats: DecryptStats | None = None) -> bytes | None:
    """Trial-decrypt fragments in order; at most one AE decryption per fragment."""
    if env.mode is not EnvelopeMode.LINEAR:
        raise ValueError("envelope is not in linear mode")
    for frag in env.fragments:
        if stats is not None:
            stats.ae_decryptions += 1
        fk = open_fragment(usk, frag)
        if fk is not None:
            return fk
    return None


def open_envelope_indexed(usk: bytes, env: Envelope, stats: DecryptStats | None = None) -> bytes | None:
    """Recompute the label, binary-search it, decrypt the matching fragment.

    Label collisions are resolved by trial-decrypting every fragment that
    carries the target label, left to right.
    """
    if env.mode is not EnvelopeMode.INDEXED:
        raise ValueError("envelope is not in indexed mode")
    assert env.labels is not None and env.nonce is not None
    target = compute_label(usk, env.nonce)
    labels = env.labels

    # Leftmost-match binary search, instrumented: one label comparison per
    # probe, <= ceil(log2 n) probes plus one equality check on the result.
    lo, hi = 0, len(labels)
    while lo < hi:
        mid = (lo + hi) // 2
        if stats is not None:
            stats.label_comparisons += 1
        if labels[mid] < target:
            lo = mid + 1
        else:
            hi = mid
    if stats is not None and lo < len(labels):
        stats.label_comparisons += 1
    if lo >= len(labels) or labels[lo] != target:
        return None

    idx = lo
    while idx < len(labels):
        if idx > lo:
            # Collision scan: only reached when an equal-label decrypt failed.
            if stats is not None:
                stats.label_comparisons += 1
            if labels[idx] != target:
                return None
        if stats is not None:
            stats.ae_decryptions += 1
        fk = open_fragment(usk, env.fragments[idx])
        if fk is not None:
            return fk
        idx += 1
    return None


def open_envelope(usk: bytes, env: Envelope, stats: DecryptStats | None = None) -> bytes | None:
    """Open either envelope flavor, dispatching on its mode byte."""
    if env.mode is EnvelopeMode.INDEXED:
        return open_envelope_indexed(usk, env, stats)
    return open_envelope_linear(usk, env, stats)


def encrypt_content(fk: bytes, plaintext: bytes) -> bytes:
    """AES-256-GCM content encryption; output is iv || ct || tag."""
    _check_key(fk, "file key")
    iv = os.urandom(AE_IV_SIZE)
    return iv + AESGCM(bytes(fk)).encrypt(iv, bytes(plaintext), None)


def decrypt_content(fk: bytes, cipher: bytes) -> bytes:
    _check_key(fk, "file key")
    if len(cipher) < CONTENT_OVERHEAD:
        raise PackageFormatError("content cipher shorter than iv+tag overhead")
    try:
        return AESGCM(bytes(fk)).decrypt(cipher[:AE_IV_SIZE], cipher[AE_IV_SIZE:], None)
    except InvalidTag as exc:
        raise DecryptionError("content decryption failed") from exc


def frame_package(env: Envelope, cipher: bytes) -> bytes:
    """Concatenate envelope and content cipher behind a length prefix."""
    env_bytes = env.to_bytes()
    return len(env_bytes).to_bytes(4, "big") + env_bytes + cipher


def split_package(package: bytes) -> tuple[Envelope, bytes]:
    """Inverse of :func:`frame_package`; bit-exact round trip."""
    if len(package) < 4:
        raise PackageFormatError("package shorter than length prefix")
    env_len = int.from_bytes(package[:4], "big")
    if 4 + env_len > len(package):
        raise PackageFormatError("envelope length prefix exceeds package size")
    env = Envelope.from_bytes(package[4 : 4 + env_len])
    return env, package[4 + env_len :]


# -- package signatures -------------------------------------------------------
#
# Both write paths must yield byte-identical stored objects, so the proxy
# signature and the detached digest signature are the same operation: an
# Ed25519 signature over SHA-256(package).

def new_signing_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    if len(seed) != 32:
        raise ValueError("signing key seed must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)


def verification_key_bytes(key: Ed25519PrivateKey | Ed25519PublicKey) -> bytes:
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes_raw()


def verification_key_from_bytes(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


def package_digest(package: bytes) -> bytes:
    return hashlib.sha256(package).digest()


@dataclass(frozen=True)
class SignedPackage:
    package: bytes
    sigma: bytes

    def __post_init__(self) -> None:
        if len(self.sigma) != SIGNATURE_SIZE:
            raise ValueError(f"signature must be {SIGNATURE_SIZE} bytes")


def sign_package(signing_key: Ed25519PrivateKey, package: bytes) -> SignedPackage:
    return SignedPackage(package=package, sigma=signing_key.sign(package_digest(package)))


def sign_digest_value(signing_key: Ed25519PrivateKey, digest: bytes) -> bytes:
    """Detached signature over a precomputed SHA-256 package digest."""
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    return signing_key.sign(digest)


def verify_package(verify_key: Ed25519PublicKey, signed: SignedPackage) -> bool:
    return verify_package_bytes(verify_key, signed.package, signed.sigma)


def verify_package_bytes(verify_key: Ed25519PublicKey, package: bytes, sigma: bytes) -> bool:
    try:
        verify_key.verify(sigma, package_digest(package))
        return True
    except InvalidSignature:
        return False


def attach_signature(package: bytes, sigma: bytes) -> bytes:
    """Stored-object layout: package || sigma || trailer length (=64)."""
    if len(sigma) != SIGNATURE_SIZE:
        raise ValueError(f"signature must be {SIGNATURE_SIZE} bytes")
    return package + sigma + SIGNATURE_SIZE.to_bytes(2, "big")


def split_signed_object(blob: bytes) -> tuple[bytes, bytes]:
    """Split a stored object into (package, sigma)."""
    if len(blob) < SIGNATURE_TRAILER_SIZE:
        raise PackageFormatError("stored object shorter than signature trailer")
    trailer_len = int.from_bytes(blob[-2:], "big")
    if trailer_len != SIGNATURE_SIZE:
        raise PackageFormatError(f"unexpected signature trailer length {trailer_len}")
    if len(blob) < trailer_len + 2:
        raise PackageFormatError("stored object truncated")
    return blob[: -(trailer_len + 2)], blob[-(trailer_len + 2) : -2]
