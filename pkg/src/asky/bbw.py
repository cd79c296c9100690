"""Public-key private broadcast encryption baseline.

The comparison scheme wraps the content key once per recipient under that
recipient's elliptic-curve public key, with a per-ciphertext one-time
signature binding the whole body so group members cannot replay envelopes:

  1. generate a fresh one-time Ed25519 keypair (vk, sk);
  2. for every recipient, ECIES-encrypt vk || fk under the recipient key;
  3. shuffle the blocks (standard) or sort them by a DH-derived label
     (efficient-decryption mode);
  4. sign the serialized body with the one-time key.

A recipient trial-decrypts blocks until one opens (standard), or recomputes
its label from the published ephemeral point and binary-searches (indexed),
then verifies the one-time signature with the vk recovered from its block
before accepting the key.

ECIES profile: curve NIST P-521 (256-bit equivalent security), fresh
ephemeral keypair per block, HKDF-SHA256 over the raw ECDH shared secret
with the ephemeral public point bound into the info string, AES-256-GCM
with a random 96-bit iv.  Per-member block: 67-byte compressed ephemeral
point || 12-byte iv || 64-byte ct || 16-byte tag = 159 bytes, plus a
28-byte SHA-224 label in indexed mode (187 bytes).

Encoding (big-endian):

  ciphertext  0x01 || mode(1) || count(4) || [label point (67), indexed]
              || count * block || sigma(64)
  block       [label(28), indexed] || eph(67) || iv(12) || ct(64) || tag(16)

Not interoperable with the symmetric envelope formats; baseline only.
"""

from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import PackageFormatError

__all__ = [
    "CURVE",
    "POINT_SIZE",
    "STANDARD_BLOCK_SIZE",
    "INDEXED_BLOCK_SIZE",
    "BbwKeyPair",
    "BbwCiphertext",
    "BbwDecryptStats",
    "bbw_keygen",
    "bbw_encrypt",
    "bbw_decrypt",
    "public_key_bytes",
    "public_key_from_bytes",
]

CURVE = ec.SECP521R1()
POINT_SIZE = 67  # compressed X9.62 point on P-521
_IV_SIZE = 12
_TAG_SIZE = 16
_PLAINTEXT_SIZE = 64  # Ed25519 vk (32) || file key (32)
_CT_SIZE = _PLAINTEXT_SIZE
LABEL_SIZE = 28
SIGNATURE_SIZE = 64
STANDARD_BLOCK_SIZE = POINT_SIZE + _IV_SIZE + _CT_SIZE + _TAG_SIZE  # 159
INDEXED_BLOCK_SIZE = LABEL_SIZE + STANDARD_BLOCK_SIZE  # 187
_HEADER_SIZE = 6
_VERSION = 0x01
_ECIES_INFO = b"asky/bbw/ecies/v1/"
_LABEL_CONTEXT = b"asky/bbw/label/v1/"

_sysrand = random.SystemRandom()


@dataclass(frozen=True)
class BbwKeyPair:
    secret: ec.EllipticCurvePrivateKey
    public: ec.EllipticCurvePublicKey

    @property
    def public_bytes(self) -> bytes:
        return public_key_bytes(self.public)


def bbw_keygen() -> BbwKeyPair:
    sk = ec.generate_private_key(CURVE)
    return BbwKeyPair(secret=sk, public=sk.public_key())


def public_key_bytes(pk: ec.EllipticCurvePublicKey) -> bytes:
    return pk.public_bytes(Encoding.X962, PublicFormat.CompressedPoint)


def public_key_from_bytes(data: bytes) -> ec.EllipticCurvePublicKey:
    return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, data)


def _ecies_key(shared: bytes, eph_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_ECIES_INFO + eph_pub,
    ).derive(shared)


def _ecies_encrypt_block(recipient: ec.EllipticCurvePublicKey, plaintext: bytes) -> bytes:
    eph = ec.generate_private_key(CURVE)
    eph_pub = public_key_bytes(eph.public_key())
    key = _ecies_key(eph.exchange(ec.ECDH(), recipient), eph_pub)
    iv = os.urandom(_IV_SIZE)
    return eph_pub + iv + AESGCM(key).encrypt(iv, plaintext, None)


def _ecies_decrypt_block(sk: ec.EllipticCurvePrivateKey, block: bytes) -> bytes | None:
    eph_pub = block[:POINT_SIZE]
    try:
        peer = public_key_from_bytes(eph_pub)
    except ValueError:
        return None
    key = _ecies_key(sk.exchange(ec.ECDH(), peer), eph_pub)
    iv = block[POINT_SIZE : POINT_SIZE + _IV_SIZE]
    try:
        return AESGCM(key).decrypt(iv, block[POINT_SIZE + _IV_SIZE :], None)
    except InvalidTag:
        return None


def _dh_label(shared: bytes, label_pub: bytes) -> bytes:
    return hashlib.sha224(_LABEL_CONTEXT + label_pub + shared).digest()


@dataclass(frozen=True)
class BbwCiphertext:
    indexed: bool
    blocks: tuple[bytes, ...]
    sigma: bytes
    labels: tuple[bytes, ...] | None = None
    label_pub: bytes | None = None

    def body_bytes(self) -> bytes:
        parts = [bytes([_VERSION, 1 if self.indexed else 0]), len(self.blocks).to_bytes(4, "big")]
        if self.indexed:
            assert self.label_pub is not None and self.labels is not None
            parts.append(self.label_pub)
            for label, block in zip(self.labels, self.blocks):
                parts.append(label)
                parts.append(block)
        else:
            parts.extend(self.blocks)
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self.body_bytes() + self.sigma

    @classmethod
    def from_bytes(cls, data: bytes) -> "BbwCiphertext":
        if len(data) < _HEADER_SIZE + SIGNATURE_SIZE:
            raise PackageFormatError("ciphertext shorter than header and signature")
        if data[0] != _VERSION:
            raise PackageFormatError(f"unsupported version {data[0]:#x}")
        indexed = data[1] == 1
        count = int.from_bytes(data[2:6], "big")
        block_size = INDEXED_BLOCK_SIZE if indexed else STANDARD_BLOCK_SIZE
        expected = _HEADER_SIZE + (POINT_SIZE if indexed else 0) + count * block_size + SIGNATURE_SIZE
        if len(data) != expected:
            raise PackageFormatError(f"ciphertext length {len(data)} != {expected}")
        off = _HEADER_SIZE
        label_pub = None
        if indexed:
            label_pub = data[off : off + POINT_SIZE]
            off += POINT_SIZE
        labels, blocks = [], []
        for _ in range(count):
            if indexed:
                labels.append(data[off : off + LABEL_SIZE])
                off += LABEL_SIZE
            blocks.append(data[off : off + STANDARD_BLOCK_SIZE])
            off += STANDARD_BLOCK_SIZE
        return cls(
            indexed=indexed,
            blocks=tuple(blocks),
            sigma=data[-SIGNATURE_SIZE:],
            labels=tuple(labels) if indexed else None,
            label_pub=label_pub,
        )


def bbw_encrypt(
    recipients: list[ec.EllipticCurvePublicKey],
    fk: bytes,
    indexed: bool = False,
) -> BbwCiphertext:
    """Wrap ``fk`` for every recipient; see the module docstring for the scheme."""
    if not recipients:
        raise ValueError("empty recipient list")
    if len(fk) != 32:
        raise ValueError("file key must be 32 bytes")
    one_time = Ed25519PrivateKey.generate()
    vk = one_time.public_key().public_bytes_raw()
    plaintext = vk + fk

    if indexed:
        label_sk = ec.generate_private_key(CURVE)
        label_pub = public_key_bytes(label_sk.public_key())
        entries = []
        for pk in recipients:
            label = _dh_label(label_sk.exchange(ec.ECDH(), pk), label_pub)
            entries.append((label, _ecies_encrypt_block(pk, plaintext)))
        entries.sort(key=lambda e: (e[0], e[1]))
        ct = BbwCiphertext(
            indexed=True,
            blocks=tuple(b for _, b in entries),
            labels=tuple(l for l, _ in entries),
            label_pub=label_pub,
            sigma=b"\x00" * SIGNATURE_SIZE,
        )
    else:
        blocks = [_ecies_encrypt_block(pk, plaintext) for pk in recipients]
        _sysrand.shuffle(blocks)
        ct = BbwCiphertext(indexed=False, blocks=tuple(blocks), sigma=b"\x00" * SIGNATURE_SIZE)

    return BbwCiphertext(
        indexed=ct.indexed,
        blocks=ct.blocks,
        labels=ct.labels,
        label_pub=ct.label_pub,
        sigma=one_time.sign(ct.body_bytes()),
    )


@dataclass
class BbwDecryptStats:
    pke_decryptions: int = 0
    label_comparisons: int = 0


def _accept(ct: BbwCiphertext, plaintext: bytes) -> bytes | None:
    vk, fk = plaintext[:32], plaintext[32:]
    try:
        Ed25519PublicKey.from_public_bytes(vk).verify(ct.sigma, ct.body_bytes())
    except (InvalidSignature, ValueError):
        return None
    return fk


def bbw_decrypt(
    sk: ec.EllipticCurvePrivateKey,
    ct: BbwCiphertext,
    stats: BbwDecryptStats | None = None,
) -> bytes | None:
    """Recover the file key, or ``None`` for non-recipients and tampering."""
    if ct.indexed:
        assert ct.labels is not None and ct.label_pub is not None
        try:
            label_peer = public_key_from_bytes(ct.label_pub)
        except ValueError:
            return None
        target = _dh_label(sk.exchange(ec.ECDH(), label_peer), ct.label_pub)
        labels = ct.labels
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
        for idx in range(lo, len(labels)):
            if idx > lo and labels[idx] != target:
                return None
            if stats is not None:
                stats.pke_decryptions += 1
            plaintext = _ecies_decrypt_block(sk, ct.blocks[idx])
            if plaintext is not None:
                return _accept(ct, plaintext)
        return None

    for block in ct.blocks:
        if stats is not None:
            stats.pke_decryptions += 1
        plaintext = _ecies_decrypt_block(sk, block)
        if plaintext is not None:
            return _accept(ct, plaintext)
    return None
