"""Access-control service: attestation, provisioning gates, enveloping."""

import os
import random

import pytest

from asky.access_control import EnvelopeRequest
from asky.attestation import compute_measurement
from asky.envelope import EnvelopeMode, open_envelope_indexed, open_envelope_linear
from asky.errors import (
    AlreadyExistsError,
    AskyError,
    AttestationError,
    NotFoundError,
    NotProvisionedError,
    PermissionDeniedError,
)


class TestAttestation:
    def test_measurement_is_stable(self):
        assert compute_measurement() == compute_measurement()
        assert len(compute_measurement()) == 32

    def test_correct_measurement_establishes_session(self, unprovisioned_stack):
        s = unprovisioned_stack
        session = s.ac_client.attest_and_provision(s.master_key, s.admin_credential)
        assert len(session) == 32

    def test_wrong_measurement_refused_client_side(self, unprovisioned_stack):
        s = unprovisioned_stack
        with pytest.raises(AttestationError, match="measurement mismatch"):
            s.ac_client.attest_and_provision(
                s.master_key, s.admin_credential, expected_measurement=os.urandom(32)
            )
        # nothing was provisioned: admin ops still refused
        with pytest.raises((NotProvisionedError, PermissionDeniedError)):
            s.ac_client.use_session(os.urandom(32))
            s.ac_client.create_user("early-bird")

    def test_admin_op_before_provisioning_errors(self, unprovisioned_stack):
        s = unprovisioned_stack
        s.ac_client.use_session(os.urandom(32))
        with pytest.raises(NotProvisionedError):
            s.ac_client.create_user("too-early")
        with pytest.raises(NotProvisionedError):
            s.ac_service.key_enveloping(
                EnvelopeRequest(writer_id="u", group_id="g", file_key=os.urandom(32))
            )

    def test_double_provision_refused_without_flag(self, stack):
        with pytest.raises(AttestationError, match="re-provisioning disabled"):
            stack.ac_client.attest_and_provision(os.urandom(32), stack.admin_credential)

    def test_session_refresh_needs_matching_credential(self, stack):
        with pytest.raises(AttestationError, match="credential mismatch"):
            stack.ac_client.attest_session(os.urandom(32))
        session = stack.ac_client.attest_session(stack.admin_credential)
        stack.ac_client.use_session(session)
        stack.ac_client.create_group("refresh-works")

    def test_bad_admin_session_rejected(self, stack):
        stack.ac_client.use_session(os.urandom(32))
        with pytest.raises(PermissionDeniedError):
            stack.ac_client.create_group("nope")

    def test_fetch_measurement_endpoint(self, stack):
        assert stack.ac_client.fetch_measurement() == compute_measurement()


class TestUsers:
    def test_create_then_fetch_round_trip(self, stack):
        usk = stack.add_user("alice")
        assert len(usk) == 32
        fetched = stack.ac_client.fetch_user_key("alice", stack.user_creds["alice"])
        assert fetched == usk

    def test_duplicate_user(self, stack):
        stack.add_user("bob")
        with pytest.raises(AlreadyExistsError):
            stack.ac_client.create_user("bob")

    def test_unknown_user_not_found(self, stack):
        with pytest.raises(NotFoundError):
            stack.ac_client.fetch_user_key("ghost", os.urandom(32))

    def test_bad_credential_rejected(self, stack):
        stack.add_user("carol")
        with pytest.raises(PermissionDeniedError):
            stack.ac_client.fetch_user_key("carol", os.urandom(32))

    def test_bulk_creation_all_retrievable(self, stack):
        names = [f"bulk-{i:04d}" for i in range(200)]
        for name in names:
            stack.add_user(name)
        sample = random.Random(7).sample(names, 20)
        for name in sample:
            assert stack.ac_client.fetch_user_key(name, stack.user_creds[name]) == stack.user_keys[name]


class TestGroupsAndEnveloping:
    @pytest.fixture
    def group(self, stack):
        stack.ac_client.create_group("team")
        for name, roles in [
            ("writer-w", ["reader", "writer"]),
            ("reader-1", ["reader"]),
            ("reader-2", ["reader"]),
        ]:
            stack.add_user(name)
            stack.ac_client.add_member("team", name, roles)
        return "team"

    def test_writer_gets_envelope_every_reader_opens(self, stack, group):
        fk = os.urandom(32)
        env = stack.ac_client.key_enveloping("writer-w", group, fk)
        assert env.mode is EnvelopeMode.LINEAR
        assert env.member_count == 3
        for name in ("writer-w", "reader-1", "reader-2"):
            assert open_envelope_linear(stack.user_keys[name], env) == fk

    def test_indexed_envelope_size(self, stack, group):
        env = stack.ac_client.key_enveloping("writer-w", group, os.urandom(32), indexed=True)
        assert len(env.to_bytes()) == 22 + 88 * 3

    def test_non_writer_denied(self, stack, group):
        with pytest.raises(PermissionDeniedError):
            stack.ac_client.key_enveloping("reader-1", group, os.urandom(32))

    def test_unknown_group_not_found(self, stack):
        stack.add_user("dave")
        with pytest.raises(NotFoundError):
            stack.ac_client.key_enveloping("dave", "no-such-group", os.urandom(32))

    def test_empty_reader_set_is_an_error(self, stack):
        stack.ac_client.create_group("writers-only")
        stack.add_user("erin")
        stack.ac_client.add_member("writers-only", "erin", ["writer"])
        with pytest.raises(AskyError, match="empty reader set"):
            stack.ac_client.key_enveloping("erin", "writers-only", os.urandom(32))

    def test_membership_grows_envelope_size(self, stack, group):
        before = stack.ac_client.key_enveloping("writer-w", group, os.urandom(32))
        stack.add_user("reader-3")
        stack.ac_client.add_member(group, "reader-3", ["reader"])
        after = stack.ac_client.key_enveloping("writer-w", group, os.urandom(32))
        assert len(after.to_bytes()) - len(before.to_bytes()) == 60
        indexed_after = stack.ac_client.key_enveloping("writer-w", group, os.urandom(32), indexed=True)
        assert len(indexed_after.to_bytes()) == 22 + 88 * 4

    def test_lazy_revocation_on_envelopes(self, stack, group):
        fk1, fk2 = os.urandom(32), os.urandom(32)
        env1 = stack.ac_client.key_enveloping("writer-w", group, fk1)
        stack.ac_client.revoke_member(group, "reader-2")
        env2 = stack.ac_client.key_enveloping("writer-w", group, fk2)
        revoked = stack.user_keys["reader-2"]
        assert open_envelope_linear(revoked, env1) == fk1
        assert open_envelope_linear(revoked, env2) is None
        assert open_envelope_linear(stack.user_keys["reader-1"], env2) == fk2

    def test_can_write_endpoint(self, stack, group):
        assert stack.ac_client.can_write("writer-w", group)
        assert not stack.ac_client.can_write("reader-1", group)
        stack.ac_client.revoke_member(group, "writer-w")
        assert not stack.ac_client.can_write("writer-w", group)

    def test_revoke_unknown_member_not_found(self, stack, group):
        stack.add_user("outsider")
        with pytest.raises(NotFoundError):
            stack.ac_client.revoke_member(group, "outsider")

    def test_permission_soundness_random_role_matrix(self, stack):
        rng = random.Random(42)
        users = [f"mx-{i}" for i in range(12)]
        for u in users:
            stack.add_user(u)
        groups = [f"grp-{i}" for i in range(4)]
        roles: dict[tuple[str, str], int] = {}
        for g in groups:
            stack.ac_client.create_group(g)
            for u in users:
                mask = rng.randrange(4)  # absent / r / w / rw
                roles[(g, u)] = mask
                if mask:
                    names = [n for n, bit in (("reader", 1), ("writer", 2)) if mask & bit]
                    stack.ac_client.add_member(g, u, names)
        for g in groups:
            has_reader = any(roles[(g, u)] & 1 for u in users)
            for u in users:
                is_writer = bool(roles[(g, u)] & 2)
                if is_writer and has_reader:
                    env = stack.ac_client.key_enveloping(u, g, os.urandom(32))
                    assert env.member_count == sum(1 for x in users if roles[(g, x)] & 1)
                elif not is_writer:
                    with pytest.raises(PermissionDeniedError):
                        stack.ac_client.key_enveloping(u, g, os.urandom(32))

    def test_indexed_envelope_equivalence_through_service(self, stack, group):
        fk = os.urandom(32)
        lin = stack.ac_client.key_enveloping("writer-w", group, fk)
        idx = stack.ac_client.key_enveloping("writer-w", group, fk, indexed=True)
        for name in ("writer-w", "reader-1", "reader-2"):
            usk = stack.user_keys[name]
            assert open_envelope_linear(usk, lin) == open_envelope_indexed(usk, idx) == fk
