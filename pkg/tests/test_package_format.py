"""Package framing, signatures and the stored-object trailer."""

import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asky.envelope import (
    Envelope,
    SignedPackage,
    attach_signature,
    build_envelope,
    build_envelope_indexed,
    frame_package,
    generate_file_key,
    generate_user_key,
    new_signing_key,
    package_digest,
    sign_digest_value,
    sign_package,
    signing_key_from_seed,
    split_package,
    split_signed_object,
    verification_key_bytes,
    verification_key_from_bytes,
    verify_package,
    verify_package_bytes,
)
from asky.errors import PackageFormatError


def _random_envelope(n=3, indexed=False):
    keys = [generate_user_key() for _ in range(n)]
    fk = generate_file_key()
    return build_envelope_indexed(keys, fk) if indexed else build_envelope(keys, fk)


class TestFraming:
    @pytest.mark.parametrize("indexed", [False, True])
    def test_round_trip(self, indexed):
        env = _random_envelope(indexed=indexed)
        cipher = os.urandom(123)
        parsed_env, parsed_cipher = split_package(frame_package(env, cipher))
        assert parsed_env == env
        assert parsed_cipher == cipher

    def test_truncated_package_rejected(self):
        env = _random_envelope()
        package = frame_package(env, os.urandom(50))
        with pytest.raises(PackageFormatError):
            split_package(package[: len(env.to_bytes())])  # cuts into envelope body

    def test_length_prefix_exceeding_buffer_rejected(self):
        with pytest.raises(PackageFormatError):
            split_package((1 << 20).to_bytes(4, "big") + b"\x00" * 64)

    def test_too_short_for_prefix_rejected(self):
        with pytest.raises(PackageFormatError):
            split_package(b"\x00\x00")

    def test_bad_envelope_version_rejected(self):
        env_bytes = bytearray(_random_envelope().to_bytes())
        env_bytes[0] = 0x7F
        package = len(env_bytes).to_bytes(4, "big") + bytes(env_bytes)
        with pytest.raises(PackageFormatError):
            split_package(package)

    def test_bad_mode_byte_rejected(self):
        env_bytes = bytearray(_random_envelope().to_bytes())
        env_bytes[1] = 0x05
        with pytest.raises(PackageFormatError):
            Envelope.from_bytes(bytes(env_bytes))

    @settings(max_examples=50, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=20),
        indexed=st.booleans(),
        cipher=st.binary(max_size=512),
    )
    def test_property_split_inverts_frame(self, n, indexed, cipher):
        keys = [os.urandom(32) for _ in range(n)]
        fk = os.urandom(32)
        env = build_envelope_indexed(keys, fk) if indexed else build_envelope(keys, fk)
        got_env, got_cipher = split_package(frame_package(env, cipher))
        assert got_env == env
        assert got_cipher == cipher


class TestSignatures:
    def test_sign_then_verify(self):
        sk = new_signing_key()
        signed = sign_package(sk, b"package bytes")
        assert verify_package(sk.public_key(), signed)

    def test_signature_is_64_bytes_and_deterministic(self):
        sk = new_signing_key()
        a = sign_package(sk, b"same input")
        b = sign_package(sk, b"same input")
        assert len(a.sigma) == 64
        assert a.sigma == b.sigma

    def test_bit_flip_fails(self):
        sk = new_signing_key()
        package = os.urandom(256)
        signed = sign_package(sk, package)
        pub = sk.public_key()
        flipped = bytearray(package)
        flipped[37] ^= 0x10
        assert not verify_package_bytes(pub, bytes(flipped), signed.sigma)
        bad_sig = bytearray(signed.sigma)
        bad_sig[0] ^= 1
        assert not verify_package_bytes(pub, package, bytes(bad_sig))

    def test_unrelated_key_fails(self):
        signed = sign_package(new_signing_key(), b"data")
        assert not verify_package(new_signing_key().public_key(), signed)

    def test_digest_signature_equals_package_signature(self):
        # The detached-digest path must produce the same sigma as the
        # package path, so both write modes verify identically.
        sk = signing_key_from_seed(os.urandom(32))
        package = os.urandom(512)
        assert sign_digest_value(sk, package_digest(package)) == sign_package(sk, package).sigma

    def test_verification_key_round_trip(self):
        sk = new_signing_key()
        raw = verification_key_bytes(sk)
        signed = sign_package(sk, b"roundtrip")
        assert verify_package(verification_key_from_bytes(raw), signed)

    def test_signed_package_rejects_short_sigma(self):
        with pytest.raises(ValueError):
            SignedPackage(package=b"", sigma=b"\x00" * 10)


class TestStoredObjectTrailer:
    def test_attach_split_round_trip(self):
        sk = new_signing_key()
        package = os.urandom(300)
        sigma = sign_package(sk, package).sigma
        blob = attach_signature(package, sigma)
        assert blob[-2:] == (64).to_bytes(2, "big")
        got_package, got_sigma = split_signed_object(blob)
        assert got_package == package
        assert got_sigma == sigma

    def test_short_blob_rejected(self):
        with pytest.raises(PackageFormatError):
            split_signed_object(b"\x00" * 40)

    def test_bad_trailer_length_rejected(self):
        blob = os.urandom(100) + (65).to_bytes(2, "big")
        with pytest.raises(PackageFormatError):
            split_signed_object(blob)
