"""Shared fixtures: an in-process deployment of the whole stack.

Services run as FastAPI apps behind Starlette test clients, so every HTTP
surface is exercised without sockets.  The same builder is reused by the
acceptance suite.
"""

import os
from dataclasses import dataclass, field

import pytest
from fastapi.testclient import TestClient

from asky.access_control import (
    AccessControlConfig,
    AccessControlService,
    create_access_control_app,
)
from asky.backends import MemoryBackend
from asky.client import AccessControlClient, ClientConfig, UserClient, WriterShieldClient
from asky.cloud_store import CloudStoreClient, ObjectStore, create_store_app
from asky.metastore import generate_master_key
from asky.writer_shield import WriterShieldConfig, WriterShieldService, create_writer_shield_app

BUCKET = "asky-data"


@dataclass
class Stack:
    backend: MemoryBackend
    store: ObjectStore
    ac_service: AccessControlService
    ws_service: WriterShieldService
    ac_client: AccessControlClient
    ws_client: WriterShieldClient
    store_client: CloudStoreClient
    master_key: bytes
    admin_credential: bytes
    signing_seed: bytes
    write_secret: bytes
    verification_key: bytes = b""
    ac_log: str | None = None
    ws_log: str | None = None
    user_keys: dict = field(default_factory=dict)
    user_creds: dict = field(default_factory=dict)

    def add_user(self, name: str) -> bytes:
        usk, cred = self.ac_client.create_user(name)
        self.user_keys[name] = usk
        self.user_creds[name] = cred
        return usk

    def user_client(self, name: str, indexed: bool = False, token_mode: bool = False) -> UserClient:
        config = ClientConfig(
            user=name,
            bucket=BUCKET,
            indexed=indexed,
            token_mode=token_mode,
            verify_key=self.verification_key.hex(),
        )
        return UserClient(
            config=config,
            user_key=self.user_keys[name],
            access_control=self.ac_client,
            writer_shield=self.ws_client,
            storage=self.store_client,
        )


def build_stack(tmp_path, provision: bool = True, request_logs: bool = False) -> Stack:
    backend = MemoryBackend()
    write_secret = os.urandom(16).hex().encode()
    store = ObjectStore(tmp_path / "objects", write_secret=write_secret)
    store_app = create_store_app(store)
    store_client = CloudStoreClient(client=TestClient(store_app), write_secret=write_secret)

    ac_log = str(tmp_path / "ac_requests.jsonl") if request_logs else None
    ws_log = str(tmp_path / "ws_requests.jsonl") if request_logs else None

    ac_service = AccessControlService(backend, AccessControlConfig(request_log_path=ac_log))
    ac_app = create_access_control_app(ac_service)
    ac_client = AccessControlClient(client=TestClient(ac_app))

    ws_service = WriterShieldService(
        permission_checker=ac_service.check_write_permission,
        config=WriterShieldConfig(bucket=BUCKET, request_log_path=ws_log),
        store_factory=lambda url, secret: CloudStoreClient(
            client=TestClient(store_app), write_secret=secret
        ),
    )
    ws_app = create_writer_shield_app(ws_service)
    ws_client = WriterShieldClient(client=TestClient(ws_app))

    stack = Stack(
        backend=backend,
        store=store,
        ac_service=ac_service,
        ws_service=ws_service,
        ac_client=ac_client,
        ws_client=ws_client,
        store_client=store_client,
        master_key=generate_master_key(),
        admin_credential=os.urandom(32),
        signing_seed=os.urandom(32),
        write_secret=write_secret,
        ac_log=ac_log,
        ws_log=ws_log,
    )
    if provision:
        stack.ac_client.attest_and_provision(stack.master_key, stack.admin_credential)
        stack.verification_key = stack.ws_client.attest_and_provision(
            signing_seed=stack.signing_seed,
            store_url="https://store.invalid",  # factory above ignores it
            store_secret=write_secret,
            admin_credential=stack.admin_credential,
        )
    return stack


@pytest.fixture
def stack(tmp_path) -> Stack:
    return build_stack(tmp_path)


@pytest.fixture
def unprovisioned_stack(tmp_path) -> Stack:
    return build_stack(tmp_path, provision=False)
