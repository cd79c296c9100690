"""Spawn real service processes on loopback for benchmarks and integration tests.

Processes are launched through ``python -m asky.serve`` with plaintext
loopback listeners (explicitly opted in; benchmark transport, not a
production deployment).  ``deploy_stack`` brings up a full system: object
store, optional shared KV store, N access-control instances and one writer
shield, then provisions everything through the real attestation handshake.
"""

from __future__ import annotations

import os
import secrets
import socket
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from ..client import AccessControlClient, WriterShieldClient
from ..metastore import generate_master_key

__all__ = ["ServiceProcess", "Cluster", "DeployedStack", "deploy_stack"]

_START_TIMEOUT = 20.0


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@dataclass
class ServiceProcess:
    name: str
    url: str
    process: subprocess.Popen

    def stop(self) -> None:
        if self.process.poll() is None:
            self.process.terminate()
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


class Cluster:
    """Owns a set of service processes; always ``stop()`` or use as a context."""

    def __init__(self) -> None:
        self.services: list[ServiceProcess] = []

    def start(self, service: str, env: dict[str, str]) -> ServiceProcess:
        port = _free_port()
        url = f"http://127.0.0.1:{port}"
        full_env = dict(os.environ)
        full_env.update(env)
        full_env["ASKY_LISTEN"] = f"127.0.0.1:{port}"
        full_env["ASKY_ALLOW_PLAINTEXT"] = "1"
        process = subprocess.Popen(
            [sys.executable, "-m", "asky.serve", service],
            env=full_env,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.PIPE,
        )
        proc = ServiceProcess(name=service, url=url, process=process)
        self.services.append(proc)
        self._wait_healthy(proc)
        return proc

    def _wait_healthy(self, proc: ServiceProcess) -> None:
        deadline = time.monotonic() + _START_TIMEOUT
        with httpx.Client() as client:
            while time.monotonic() < deadline:
                if proc.process.poll() is not None:
                    stderr = proc.process.stderr.read().decode(errors="replace") if proc.process.stderr else ""
                    raise RuntimeError(f"{proc.name} exited during startup:\n{stderr}")
                try:
                    if client.get(proc.url + "/healthz", timeout=1.0).status_code == 200:
                        return
                except httpx.HTTPError:
                    time.sleep(0.05)
        raise RuntimeError(f"{proc.name} did not become healthy within {_START_TIMEOUT}s")

    def stop(self) -> None:
        for proc in reversed(self.services):
            proc.stop()
        self.services.clear()

    def __enter__(self) -> "Cluster":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


@dataclass
class DeployedStack:
    cluster: Cluster
    ac_urls: list[str]
    ws_url: str
    store_url: str
    kv_url: str | None
    bucket: str
    master_key: bytes
    admin_credential: bytes
    signing_seed: bytes
    store_secret: str
    verification_key: bytes
    workdir: Path
    ac_log: Path | None = None
    ws_log: Path | None = None
    sessions: dict[str, bytes] = field(default_factory=dict)

    def ac_client(self, index: int = 0) -> AccessControlClient:
        client = AccessControlClient(self.ac_urls[index])
        session = self.sessions.get(self.ac_urls[index])
        if session:
            client.use_session(session)
        return client

    def ws_client(self) -> WriterShieldClient:
        return WriterShieldClient(self.ws_url)

    def stop(self) -> None:
        self.cluster.stop()


def deploy_stack(
    workdir: str | Path,
    ac_instances: int = 1,
    bucket: str = "asky-data",
    request_logs: bool = False,
    token_ttl: float = 60.0,
    provision: bool = True,
) -> DeployedStack:
    """Bring up store + (kv) + access-control instances + writer shield, provisioned."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    cluster = Cluster()
    try:
        store_secret = secrets.token_hex(16)
        store_proc = cluster.start(
            "cloud-store",
            {
                "ASKY_STORE_ROOT": str(workdir / "objects"),
                "ASKY_STORE_SECRET": store_secret,
                "ASKY_STORE_LOG": str(workdir / "store_access.jsonl"),
            },
        )

        kv_url = None
        if ac_instances > 1:
            kv_url = cluster.start("kv", {"ASKY_BACKEND": "memory"}).url

        ac_log = workdir / "ac_requests.jsonl" if request_logs else None
        ws_log = workdir / "ws_requests.jsonl" if request_logs else None

        ac_urls = []
        for i in range(ac_instances):
            env = {"ASKY_BACKEND": f"http:{kv_url}" if kv_url else "memory"}
            if ac_log:
                env["ASKY_REQUEST_LOG"] = str(ac_log)
            ac_urls.append(cluster.start("access-control", env).url)

        ws_env = {"ASKY_AC_URL": ac_urls[0], "ASKY_BUCKET": bucket, "ASKY_TOKEN_TTL": str(token_ttl)}
        if ws_log:
            ws_env["ASKY_REQUEST_LOG"] = str(ws_log)
        ws_proc = cluster.start("writer-shield", ws_env)

        master_key = generate_master_key()
        admin_credential = secrets.token_bytes(32)
        signing_seed = secrets.token_bytes(32)

        sessions = {}
        verification_key = b""
        if provision:
            for url in ac_urls:
                client = AccessControlClient(url)
                sessions[url] = client.attest_and_provision(master_key, admin_credential)
            verification_key = WriterShieldClient(ws_proc.url).attest_and_provision(
                signing_seed=signing_seed,
                store_url=store_proc.url,
                store_secret=store_secret.encode(),
                admin_credential=admin_credential,
            )

        return DeployedStack(
            cluster=cluster,
            ac_urls=ac_urls,
            ws_url=ws_proc.url,
            store_url=store_proc.url,
            kv_url=kv_url,
            bucket=bucket,
            master_key=master_key,
            admin_credential=admin_credential,
            signing_seed=signing_seed,
            store_secret=store_secret,
            verification_key=verification_key,
            workdir=workdir,
            ac_log=ac_log,
            ws_log=ws_log,
            sessions=sessions,
        )
    except BaseException:
        cluster.stop()
        raise
