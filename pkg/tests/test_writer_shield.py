"""Writer shield: provisioning, proxied writes, tokens, digest signatures."""

import hashlib
import os

import pytest

from asky.envelope import (
    new_signing_key,
    sign_package,
    split_signed_object,
    verification_key_bytes,
    verification_key_from_bytes,
    verify_package_bytes,
)
from asky.errors import NotProvisionedError, PermissionDeniedError
from conftest import BUCKET, build_stack


@pytest.fixture
def ready(stack):
    stack.ac_client.create_group("team")
    stack.add_user("wanda")
    stack.add_user("rita")
    stack.ac_client.add_member("team", "wanda", ["reader", "writer"])
    stack.ac_client.add_member("team", "rita", ["reader"])
    return stack


class TestProvisioning:
    def test_ops_refused_before_provisioning(self, unprovisioned_stack):
        s = unprovisioned_stack
        with pytest.raises(NotProvisionedError):
            s.ws_client.proxy_file("wanda", "team", b"pkg", "obj")
        with pytest.raises(NotProvisionedError):
            s.ws_client.verification_key()

    def test_verification_key_matches_installed_seed(self, stack):
        from asky.envelope import signing_key_from_seed

        expected = verification_key_bytes(signing_key_from_seed(stack.signing_seed))
        assert stack.ws_client.verification_key() == expected == stack.verification_key

    def test_reprovision_rotates_key_old_signatures_still_verify(self, tmp_path):
        stack = build_stack(tmp_path)
        old_pub = stack.verification_key
        package = os.urandom(100)
        from asky.envelope import signing_key_from_seed

        old_sigma = sign_package(signing_key_from_seed(stack.signing_seed), package).sigma

        new_seed = os.urandom(32)
        new_pub = stack.ws_client.attest_and_provision(
            signing_seed=new_seed,
            store_url="https://store.invalid",
            store_secret=stack.write_secret,
            admin_credential=stack.admin_credential,
        )
        assert new_pub != old_pub
        assert stack.ws_client.verification_key() == new_pub
        # signatures made under the old key keep verifying under the old public key
        assert verify_package_bytes(verification_key_from_bytes(old_pub), package, old_sigma)

    def test_reprovision_requires_matching_credential(self, stack):
        from asky.errors import AttestationError

        with pytest.raises(AttestationError):
            stack.ws_client.attest_and_provision(
                signing_seed=os.urandom(32),
                store_url="https://store.invalid",
                store_secret=stack.write_secret,
                admin_credential=os.urandom(32),
            )


class TestProxyFile:
    def test_writer_upload_round_trip_verifies(self, ready):
        package = os.urandom(512)
        ready.ws_client.proxy_file("wanda", "team", package, "obj-1")
        blob = ready.store_client.get_object(BUCKET, "obj-1")
        got_package, sigma = split_signed_object(blob)
        assert got_package == package
        pub = verification_key_from_bytes(ready.verification_key)
        assert verify_package_bytes(pub, got_package, sigma)

    def test_non_writer_denied_nothing_stored(self, ready):
        with pytest.raises(PermissionDeniedError):
            ready.ws_client.proxy_file("rita", "team", b"pkg", "obj-denied")
        assert not ready.store.object_exists(BUCKET, "obj-denied")

    def test_unknown_user_denied(self, ready):
        with pytest.raises(PermissionDeniedError):
            ready.ws_client.proxy_file("nobody", "team", b"pkg", "obj-x")

    def test_revocation_honored_by_next_request(self, ready):
        ready.ws_client.proxy_file("wanda", "team", b"pkg", "obj-ok")
        ready.ac_client.revoke_member("team", "wanda")
        with pytest.raises(PermissionDeniedError):
            ready.ws_client.proxy_file("wanda", "team", b"pkg", "obj-after-revoke")
        assert not ready.store.object_exists(BUCKET, "obj-after-revoke")

    def test_every_stored_object_carries_verifying_signature(self, ready):
        for i in range(5):
            ready.ws_client.proxy_file("wanda", "team", os.urandom(64), f"obj-{i}")
        pub = verification_key_from_bytes(ready.verification_key)
        for key in ready.store.list_keys(BUCKET):
            package, sigma = split_signed_object(ready.store.get_object(BUCKET, key))
            assert verify_package_bytes(pub, package, sigma)

    def test_proxied_write_carries_no_user_identity(self, ready):
        ready.ws_client.proxy_file("wanda", "team", b"pkg", "obj-anon")
        puts = [e for e in ready.store.access_log() if e["op"] == "put"]
        assert puts and all(e["principal"] == "" for e in puts)


class TestTokensAndDigests:
    def test_token_upload_within_ttl(self, ready):
        token = ready.ws_client.issue_token("wanda", "team", "obj-tok")
        ready.store_client.put_with_token(token, b"token-written")
        assert ready.store_client.get_object(BUCKET, "obj-tok") == b"token-written"

    def test_token_denied_for_non_writer(self, ready):
        with pytest.raises(PermissionDeniedError):
            ready.ws_client.issue_token("rita", "team", "obj-tok")

    def test_token_writes_carry_no_user_identity(self, ready):
        token = ready.ws_client.issue_token("wanda", "team", "obj-tok2")
        ready.store_client.put_with_token(token, b"data")
        puts = [e for e in ready.store.access_log() if e["op"] == "put"]
        assert puts and all(e["principal"] == "" for e in puts)

    def test_sign_digest_round_trip(self, ready):
        package = os.urandom(256)
        digest = hashlib.sha256(package).digest()
        sigma = ready.ws_client.sign_digest("wanda", "team", digest)
        pub = verification_key_from_bytes(ready.verification_key)
        assert verify_package_bytes(pub, package, sigma)

    def test_sign_digest_denied_for_non_writer(self, ready):
        with pytest.raises(PermissionDeniedError):
            ready.ws_client.sign_digest("rita", "team", os.urandom(32))

    def test_signature_over_wrong_digest_fails(self, ready):
        sigma = ready.ws_client.sign_digest("wanda", "team", hashlib.sha256(b"A").digest())
        pub = verification_key_from_bytes(ready.verification_key)
        assert not verify_package_bytes(pub, b"B-content", sigma)

    def test_token_mode_can_be_disabled(self, ready):
        ready.ws_service.config.allow_token_mode = False
        with pytest.raises(PermissionDeniedError, match="disabled by policy"):
            ready.ws_client.issue_token("wanda", "team", "obj")
