"""Sealed persistence of users and groups.

Every field that reaches the backend is either keyed-hashed (HMAC-SHA256
under the master key) or encrypted (AES-256-GCM under the master key with a
fresh iv per field), so the storage provider learns nothing beyond group
sizes.  A user appears once in the users collection and once per group it
belongs to, under a group-salted name hash and an independently encrypted
key copy, which keeps its group memberships unlinkable.

Document fields:

  user    uname_e = HMAC(M_k, uname)
          ukey_e  = AES-GCM(M_k, user_key)
          usig    = HMAC(M_k, uname_e || ukey_e)

  group   gname_e = HMAC(M_k, gname)
          version = unsigned 64-bit, bumped by every committed mutation
          members = [mname_e = HMAC(M_k, uname || gname),
                     mkey_e  = AES-GCM(M_k, user_key),
                     role_e  = AES-GCM(M_k, role bitmask)]
          gsig    = HMAC(M_k, gname_e || version
                          || concat(mname_e || mkey_e || role_e))

Documents serialize as tagged, length-prefixed binary fields so signature
inputs are byte-stable.  Reads verify the document signature before any
field is unsealed; malformed or tampered bytes raise ``IntegrityError``.
Mutations go through compare-and-swap on the document version, retried with
capped exponential backoff before the conflict is surfaced.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import random
import struct
import time
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .backends import KVBackend
from .errors import (
    AlreadyExistsError,
    IntegrityError,
    NotFoundError,
    VersionConflictError,
)

__all__ = [
    "ROLE_READER",
    "ROLE_WRITER",
    "MASTER_KEY_SIZE",
    "MetadataStore",
    "generate_master_key",
]

ROLE_READER = 0x01
ROLE_WRITER = 0x02
MASTER_KEY_SIZE = 32

_CAS_ATTEMPTS = 8
_BACKOFF_BASE = 0.002  # seconds; doubled per attempt, with jitter

# Field tags for the binary document codec.
_T_UNAME, _T_UKEY, _T_USIG = 0x01, 0x02, 0x03
_T_GNAME, _T_VERSION, _T_MEMBER, _T_GSIG = 0x11, 0x12, 0x13, 0x14
_T_MNAME, _T_MKEY, _T_MROLE = 0x21, 0x22, 0x23
_T_BLOB = 0x31


def generate_master_key() -> bytes:
    return os.urandom(MASTER_KEY_SIZE)


def _encode_fields(fields: list[tuple[int, bytes]]) -> bytes:
    out = bytearray()
    for tag, value in fields:
        out.append(tag)
        out += struct.pack(">I", len(value))
        out += value
    return bytes(out)


def _decode_fields(data: bytes) -> list[tuple[int, bytes]]:
    fields = []
    off = 0
    while off < len(data):
        if off + 5 > len(data):
            raise IntegrityError("malformed sealed document: truncated field header")
        tag = data[off]
        (length,) = struct.unpack_from(">I", data, off + 1)
        off += 5
        if off + length > len(data):
            raise IntegrityError("malformed sealed document: field exceeds buffer")
        fields.append((tag, data[off : off + length]))
        off += length
    return fields


def _field(fields: list[tuple[int, bytes]], tag: int) -> bytes:
    for t, v in fields:
        if t == tag:
            return v
    raise IntegrityError(f"malformed sealed document: missing field {tag:#x}")


@dataclass(frozen=True)
class _Member:
    mname_e: bytes
    mkey_e: bytes
    role_e: bytes

    def encode(self) -> bytes:
        return _encode_fields([(_T_MNAME, self.mname_e), (_T_MKEY, self.mkey_e), (_T_MROLE, self.role_e)])

    @classmethod
    def decode(cls, blob: bytes) -> "_Member":
        fields = _decode_fields(blob)
        return cls(_field(fields, _T_MNAME), _field(fields, _T_MKEY), _field(fields, _T_MROLE))

    def sig_input(self) -> bytes:
        return self.mname_e + self.mkey_e + self.role_e


class MetadataStore:
    """Sealed user/group document store over a pluggable KV backend."""

    def __init__(self, master_key: bytes, backend: KVBackend) -> None:
        if len(master_key) != MASTER_KEY_SIZE:
            raise ValueError(f"master key must be {MASTER_KEY_SIZE} bytes")
        self._mk = bytes(master_key)
        self._aead = AESGCM(self._mk)
        self._backend = backend
        self._rand = random.Random()

    # -- sealing primitives --------------------------------------------------

    def _hmac(self, data: bytes) -> bytes:
        return hmac.new(self._mk, data, hashlib.sha256).digest()

    def _seal(self, plaintext: bytes) -> bytes:
        iv = os.urandom(12)
        return iv + self._aead.encrypt(iv, plaintext, None)

    def _open(self, blob: bytes) -> bytes:
        if len(blob) < 28:
            raise IntegrityError("sealed field too short")
        try:
            return self._aead.decrypt(blob[:12], blob[12:], None)
        except InvalidTag as exc:
            raise IntegrityError("sealed field failed authentication") from exc

    def _user_key_id(self, uname: str) -> str:
        return "u-" + self._hmac(uname.encode("utf-8")).hex()

    def _group_key_id(self, gname: str) -> str:
        return "g-" + self._hmac(gname.encode("utf-8")).hex()

    def _cred_key_id(self, uname: str) -> str:
        return "c-" + self._hmac(b"cred:" + uname.encode("utf-8")).hex()

    def _member_name(self, uname: str, gname: str) -> bytes:
        return self._hmac(uname.encode("utf-8") + gname.encode("utf-8"))

    # -- users ----------------------------------------------------------------

    def put_user(self, uname: str, usk: bytes) -> None:
        if len(usk) != 32:
            raise ValueError("user key must be 32 bytes")
        uname_e = self._hmac(uname.encode("utf-8"))
        ukey_e = self._seal(usk)
        usig = self._hmac(uname_e + ukey_e)
        doc = _encode_fields([(_T_UNAME, uname_e), (_T_UKEY, ukey_e), (_T_USIG, usig)])
        try:
            self._backend.put_if_version(self._user_key_id(uname), doc, 0)
        except VersionConflictError:
            raise AlreadyExistsError(f"user already exists") from None

    def user_exists(self, uname: str) -> bool:
        return self._backend.get(self._user_key_id(uname)) is not None

    def get_user_key(self, uname: str) -> bytes:
        found = self._backend.get(self._user_key_id(uname))
        if found is None:
            raise NotFoundError("unknown user")
        fields = _decode_fields(found[0])
        uname_e, ukey_e, usig = _field(fields, _T_UNAME), _field(fields, _T_UKEY), _field(fields, _T_USIG)
        if not hmac.compare_digest(usig, self._hmac(uname_e + ukey_e)):
            raise IntegrityError("user document signature mismatch")
        if not hmac.compare_digest(uname_e, self._hmac(uname.encode("utf-8"))):
            raise IntegrityError("user document name mismatch")
        return self._open(ukey_e)

    # -- bootstrap credentials (service-layer secrets, sealed like the rest) --

    def put_credential(self, uname: str, credential_hash: bytes) -> None:
        doc = _encode_fields([(_T_BLOB, self._seal(credential_hash))])
        found = self._backend.get(self._cred_key_id(uname))
        self._backend.put_if_version(self._cred_key_id(uname), doc, found[1] if found else 0)

    def get_credential(self, uname: str) -> bytes:
        found = self._backend.get(self._cred_key_id(uname))
        if found is None:
            raise NotFoundError("no credential for user")
        return self._open(_field(_decode_fields(found[0]), _T_BLOB))

    # -- groups ----------------------------------------------------------------

    def _group_sig(self, gname_e: bytes, version: int, members: list[_Member]) -> bytes:
        acc = gname_e + struct.pack(">Q", version)
        for m in members:
            acc += m.sig_input()
        return self._hmac(acc)

    def _encode_group(self, gname_e: bytes, version: int, members: list[_Member]) -> bytes:
        fields = [(_T_GNAME, gname_e), (_T_VERSION, struct.pack(">Q", version))]
        fields += [(_T_MEMBER, m.encode()) for m in members]
        fields.append((_T_GSIG, self._group_sig(gname_e, version, members)))
        return _encode_fields(fields)

    def _load_group(self, gname: str) -> tuple[bytes, int, list[_Member], int]:
        """Return (gname_e, doc version, members, backend version), verified."""
        found = self._backend.get(self._group_key_id(gname))
        if found is None:
            raise NotFoundError("unknown group")
        data, backend_version = found
        fields = _decode_fields(data)
        gname_e = _field(fields, _T_GNAME)
        version = struct.unpack(">Q", _field(fields, _T_VERSION))[0]
        members = [_Member.decode(v) for t, v in fields if t == _T_MEMBER]
        gsig = _field(fields, _T_GSIG)
        if not hmac.compare_digest(gsig, self._group_sig(gname_e, version, members)):
            raise IntegrityError("group document signature mismatch")
        if not hmac.compare_digest(gname_e, self._hmac(gname.encode("utf-8"))):
            raise IntegrityError("group document name mismatch")
        return gname_e, version, members, backend_version

    def create_group(self, gname: str) -> None:
        gname_e = self._hmac(gname.encode("utf-8"))
        doc = self._encode_group(gname_e, 1, [])
        try:
            self._backend.put_if_version(self._group_key_id(gname), doc, 0)
        except VersionConflictError:
            raise AlreadyExistsError("group already exists") from None

    def group_exists(self, gname: str) -> bool:
        return self._backend.get(self._group_key_id(gname)) is not None

    def group_version(self, gname: str) -> int:
        return self._load_group(gname)[1]

    def _mutate_group(self, gname: str, mutate) -> None:
        """Read-verify-modify-write with CAS; ``mutate`` edits the member list."""
        for attempt in range(_CAS_ATTEMPTS):
            gname_e, version, members, backend_version = self._load_group(gname)
            members = mutate(list(members))
            doc = self._encode_group(gname_e, version + 1, members)
            try:
                self._backend.put_if_version(self._group_key_id(gname), doc, backend_version)
                return
            except VersionConflictError:
                if attempt == _CAS_ATTEMPTS - 1:
                    raise
                time.sleep(self._rand.uniform(0, _BACKOFF_BASE * (1 << attempt)))
        raise VersionConflictError("group mutation retries exhausted")

    def upsert_member(self, gname: str, uname: str, roles: int) -> None:
        if roles & ~(ROLE_READER | ROLE_WRITER):
            raise ValueError(f"invalid role bitmask {roles:#x}")
        usk = self.get_user_key(uname)  # also enforces "user exists"
        mname_e = self._member_name(uname, gname)

        def apply(members: list[_Member]) -> list[_Member]:
            entry = _Member(mname_e=mname_e, mkey_e=self._seal(usk), role_e=self._seal(bytes([roles])))
            for i, m in enumerate(members):
                if hmac.compare_digest(m.mname_e, mname_e):
                    members[i] = entry
                    return members
            members.append(entry)
            return members

        self._mutate_group(gname, apply)

    def upsert_members(self, gname: str, members: list[tuple[str, int]]) -> None:
        """Batch add/replace in one RMW cycle; one version bump for the lot."""
        entries = []
        for uname, roles in members:
            if roles & ~(ROLE_READER | ROLE_WRITER):
                raise ValueError(f"invalid role bitmask {roles:#x}")
            usk = self.get_user_key(uname)
            entries.append(
                _Member(
                    mname_e=self._member_name(uname, gname),
                    mkey_e=self._seal(usk),
                    role_e=self._seal(bytes([roles])),
                )
            )

        def apply(current: list[_Member]) -> list[_Member]:
            by_name = {m.mname_e: i for i, m in enumerate(current)}
            for entry in entries:
                idx = by_name.get(entry.mname_e)
                if idx is None:
                    by_name[entry.mname_e] = len(current)
                    current.append(entry)
                else:
                    current[idx] = entry
            return current

        self._mutate_group(gname, apply)

    def remove_member(self, gname: str, uname: str) -> None:
        mname_e = self._member_name(uname, gname)

        def apply(members: list[_Member]) -> list[_Member]:
            kept = [m for m in members if not hmac.compare_digest(m.mname_e, mname_e)]
            if len(kept) == len(members):
                raise NotFoundError("user is not a member of the group")
            return kept

        self._mutate_group(gname, apply)

    def list_member_keys(self, gname: str, role: int) -> list[tuple[bytes, bytes]]:
        """Unsealed (member-name-hash, user-key) pairs for holders of ``role``."""
        _, _, members, _ = self._load_group(gname)
        out = []
        for m in members:
            if self._open(m.role_e)[0] & role:
                out.append((m.mname_e, self._open(m.mkey_e)))
        return out

    def member_roles(self, gname: str, uname: str) -> int:
        """Role bitmask for a member, 0 when not a member."""
        _, _, members, _ = self._load_group(gname)
        mname_e = self._member_name(uname, gname)
        for m in members:
            if hmac.compare_digest(m.mname_e, mname_e):
                return self._open(m.role_e)[0]
        return 0

    def check_role(self, gname: str, uname: str, role: int) -> bool:
        return bool(self.member_roles(gname, uname) & role)
