"""Crypto core: fragments, envelopes, labels, content cipher."""

import hashlib
import os

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from asky.envelope import (
    FRAGMENT_SIZE,
    LABEL_SIZE,
    DecryptStats,
    Envelope,
    EnvelopeMode,
    Fragment,
    build_envelope,
    build_envelope_indexed,
    compute_label,
    decrypt_content,
    encrypt_content,
    generate_file_key,
    generate_user_key,
    open_envelope,
    open_envelope_indexed,
    open_envelope_linear,
    open_fragment,
    seal_fragment,
)
from asky.errors import DecryptionError, PackageFormatError


class TestFragment:
    def test_seal_open_round_trip(self):
        usk, fk = generate_user_key(), generate_file_key()
        frag = seal_fragment(usk, fk)
        assert open_fragment(usk, frag) == fk

    def test_fragment_serializes_to_60_bytes(self):
        frag = seal_fragment(generate_user_key(), generate_file_key())
        assert len(frag.to_bytes()) == FRAGMENT_SIZE == 60

    def test_seal_matches_independent_aesgcm(self):
        # Oracle: decrypt the fragment with the raw AEAD primitive directly.
        usk, fk = generate_user_key(), generate_file_key()
        frag = seal_fragment(usk, fk)
        assert AESGCM(usk).decrypt(frag.iv, frag.ct + frag.tag, None) == fk

    def test_wrong_key_fails(self):
        frag = seal_fragment(generate_user_key(), generate_file_key())
        assert open_fragment(generate_user_key(), frag) is None

    def test_flipped_ciphertext_bit_fails(self):
        usk = generate_user_key()
        frag = seal_fragment(usk, generate_file_key())
        bad = Fragment(iv=frag.iv, ct=bytes([frag.ct[0] ^ 1]) + frag.ct[1:], tag=frag.tag)
        assert open_fragment(usk, bad) is None

    def test_fresh_iv_per_call(self):
        usk, fk = generate_user_key(), generate_file_key()
        a, b = seal_fragment(usk, fk), seal_fragment(usk, fk)
        assert a.iv != b.iv and a.to_bytes() != b.to_bytes()

    def test_bad_key_sizes_rejected(self):
        with pytest.raises(ValueError):
            seal_fragment(b"short", generate_file_key())
        with pytest.raises(ValueError):
            seal_fragment(generate_user_key(), b"\x00" * 31)


class TestLabel:
    def test_deterministic(self):
        usk, nonce = generate_user_key(), os.urandom(16)
        assert compute_label(usk, nonce) == compute_label(usk, nonce)

    def test_matches_sha224_of_concatenation(self):
        usk, nonce = generate_user_key(), os.urandom(16)
        assert compute_label(usk, nonce) == hashlib.sha224(usk + nonce).digest()

    def test_distinct_nonces_give_distinct_labels(self):
        usk = generate_user_key()
        assert compute_label(usk, os.urandom(16)) != compute_label(usk, os.urandom(16))

    def test_label_length_is_28(self):
        assert len(compute_label(generate_user_key(), os.urandom(16))) == LABEL_SIZE == 28


class TestEnvelopeBuild:
    def test_linear_size_n3(self):
        keys = [generate_user_key() for _ in range(3)]
        env = build_envelope(keys, generate_file_key())
        assert len(env.to_bytes()) == 6 + 60 * 3 == 186

    def test_indexed_size_n3(self):
        keys = [generate_user_key() for _ in range(3)]
        env = build_envelope_indexed(keys, generate_file_key())
        assert len(env.to_bytes()) == 22 + 88 * 3 == 286

    @pytest.mark.parametrize("n", [1, 10, 100, 1000])
    def test_size_law(self, n):
        keys = [generate_user_key() for _ in range(n)]
        fk = generate_file_key()
        assert len(build_envelope(keys, fk).to_bytes()) == 6 + 60 * n
        assert len(build_envelope_indexed(keys, fk).to_bytes()) == 22 + 88 * n

    def test_empty_reader_set_rejected(self):
        with pytest.raises(ValueError, match="empty reader set"):
            build_envelope([], generate_file_key())
        with pytest.raises(ValueError, match="empty reader set"):
            build_envelope_indexed([], generate_file_key())

    def test_every_member_opens_linear(self):
        keys = [generate_user_key() for _ in range(17)]
        fk = generate_file_key()
        env = build_envelope(keys, fk)
        for usk in keys:
            assert open_envelope_linear(usk, env) == fk

    def test_indexed_labels_sorted(self):
        keys = [generate_user_key() for _ in range(50)]
        env = build_envelope_indexed(keys, generate_file_key())
        assert list(env.labels) == sorted(env.labels)

    def test_indexed_and_linear_agree_for_every_member(self):
        keys = [generate_user_key() for _ in range(23)]
        fk = generate_file_key()
        lin = build_envelope(keys, fk)
        idx = build_envelope_indexed(keys, fk)
        for usk in keys:
            assert open_envelope_linear(usk, lin) == open_envelope_indexed(usk, idx) == fk

    def test_round_trip_serialization(self):
        keys = [generate_user_key() for _ in range(5)]
        fk = generate_file_key()
        for env in (build_envelope(keys, fk), build_envelope_indexed(keys, fk)):
            parsed = Envelope.from_bytes(env.to_bytes())
            assert parsed == env


class TestEnvelopeOpen:
    def test_member_at_last_position_takes_n_trials(self):
        keys = [generate_user_key() for _ in range(8)]
        fk = generate_file_key()
        frags = tuple(seal_fragment(k, fk) for k in keys)
        env = Envelope(mode=EnvelopeMode.LINEAR, fragments=frags)
        stats = DecryptStats()
        assert open_envelope_linear(keys[-1], env, stats) == fk
        assert stats.ae_decryptions == 8

    def test_single_member_one_trial(self):
        usk, fk = generate_user_key(), generate_file_key()
        env = build_envelope([usk], fk)
        stats = DecryptStats()
        assert open_envelope_linear(usk, env, stats) == fk
        assert stats.ae_decryptions == 1

    def test_non_member_fails_after_n_trials(self):
        keys = [generate_user_key() for _ in range(9)]
        env = build_envelope(keys, generate_file_key())
        stats = DecryptStats()
        assert open_envelope_linear(generate_user_key(), env, stats) is None
        assert stats.ae_decryptions == 9

    def test_indexed_member_single_decryption(self):
        keys = [generate_user_key() for _ in range(200)]
        fk = generate_file_key()
        env = build_envelope_indexed(keys, fk)
        for usk in keys[:20]:
            stats = DecryptStats()
            assert open_envelope_indexed(usk, env, stats) == fk
            assert stats.ae_decryptions == 1

    def test_indexed_non_member_zero_decryptions(self):
        keys = [generate_user_key() for _ in range(200)]
        env = build_envelope_indexed(keys, generate_file_key())
        stats = DecryptStats()
        assert open_envelope_indexed(generate_user_key(), env, stats) is None
        assert stats.ae_decryptions == 0

    def test_indexed_label_comparisons_logarithmic(self):
        n = 1024
        keys = [generate_user_key() for _ in range(n)]
        env = build_envelope_indexed(keys, generate_file_key())
        for usk in keys[:10]:
            stats = DecryptStats()
            open_envelope_indexed(usk, env, stats)
            assert stats.label_comparisons <= 11 + 1  # ceil(log2 1024) + 1

    def test_label_collision_still_opens(self):
        # Force a collision by crafting an envelope with duplicate labels.
        fk = generate_file_key()
        k1, k2 = generate_user_key(), generate_user_key()
        nonce = os.urandom(16)
        shared_label = compute_label(k1, nonce)
        entries = sorted(
            [(shared_label, seal_fragment(k2, fk)), (shared_label, seal_fragment(k1, fk))],
            key=lambda e: (e[0], e[1].to_bytes()),
        )
        env = Envelope(
            mode=EnvelopeMode.INDEXED,
            fragments=tuple(f for _, f in entries),
            labels=tuple(l for l, _ in entries),
            nonce=nonce,
        )
        stats = DecryptStats()
        assert open_envelope_indexed(k1, env, stats) == fk
        assert stats.ae_decryptions <= 2

    def test_open_envelope_dispatches_on_mode(self):
        keys = [generate_user_key() for _ in range(4)]
        fk = generate_file_key()
        assert open_envelope(keys[0], build_envelope(keys, fk)) == fk
        assert open_envelope(keys[0], build_envelope_indexed(keys, fk)) == fk

    def test_mode_mismatch_raises(self):
        keys = [generate_user_key()]
        with pytest.raises(ValueError):
            open_envelope_indexed(keys[0], build_envelope(keys, generate_file_key()))
        with pytest.raises(ValueError):
            open_envelope_linear(keys[0], build_envelope_indexed(keys, generate_file_key()))


class TestUnlinkability:
    def test_rebuild_shares_no_fragment_bytes(self):
        keys = [generate_user_key() for _ in range(10)]
        fk = generate_file_key()
        a = {f.to_bytes() for f in build_envelope(keys, fk).fragments}
        b = {f.to_bytes() for f in build_envelope(keys, fk).fragments}
        assert not (a & b)
        ai = build_envelope_indexed(keys, fk)
        bi = build_envelope_indexed(keys, fk)
        assert ai.nonce != bi.nonce
        assert not ({f.to_bytes() for f in ai.fragments} & {f.to_bytes() for f in bi.fragments})

    def test_linear_position_uniform_chi_square(self):
        # 10k builds of a 4-member group; position of member 0's fragment
        # must not reject uniformity at alpha=0.001.
        keys = [generate_user_key() for _ in range(4)]
        fk = generate_file_key()
        counts = [0, 0, 0, 0]
        for _ in range(10_000):
            env = build_envelope(keys, fk)
            for pos, frag in enumerate(env.fragments):
                if open_fragment(keys[0], frag) is not None:
                    counts[pos] += 1
                    break
        assert sum(counts) == 10_000
        _, p = chisquare(counts)
        assert p > 0.001


class TestContentCipher:
    @pytest.mark.parametrize("size", [0, 1024, 1 << 20])
    def test_round_trip(self, size):
        fk = generate_file_key()
        plaintext = os.urandom(size)
        cipher = encrypt_content(fk, plaintext)
        assert len(cipher) == size + 28
        assert decrypt_content(fk, cipher) == plaintext

    def test_empty_plaintext_overhead_only(self):
        assert len(encrypt_content(generate_file_key(), b"")) == 28

    def test_wrong_key_raises(self):
        cipher = encrypt_content(generate_file_key(), b"payload")
        with pytest.raises(DecryptionError):
            decrypt_content(generate_file_key(), cipher)

    def test_truncated_cipher_raises_format_error(self):
        with pytest.raises(PackageFormatError):
            decrypt_content(generate_file_key(), b"\x00" * 27)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(min_value=1, max_value=40), data=st.binary(max_size=256))
def test_property_every_member_recovers_key_and_content(n, data):
    keys = [os.urandom(32) for _ in range(n)]
    fk = os.urandom(32)
    cipher = encrypt_content(fk, data)
    lin = build_envelope(keys, fk)
    idx = build_envelope_indexed(keys, fk)
    member = keys[n // 2]
    for env in (lin, idx):
        got = open_envelope(member, env)
        assert got == fk
        assert decrypt_content(got, cipher) == data
