"""Service launcher: run any asky service as a standalone process.

Configuration comes from the environment:

  ASKY_LISTEN           host:port (default 127.0.0.1:<service default>)
  ASKY_TLS_CERT/KEY     TLS material; required unless ASKY_ALLOW_PLAINTEXT=1
  ASKY_ALLOW_PLAINTEXT  explicit opt-in for loopback/bench deployments
  ASKY_BACKEND          access-control/kv: memory | file:<path> | http:<url>
  ASKY_REQUEST_LOG      access-control/writer-shield: JSONL request log path
  ASKY_AC_URL           writer-shield: access-control base URL
  ASKY_BUCKET           writer-shield bucket (default asky-data)
  ASKY_TOKEN_TTL        writer-shield token lifetime seconds (default 60)
  ASKY_STORE_ROOT       cloud-store object root directory
  ASKY_STORE_SECRET     cloud-store write secret
  ASKY_STORE_LOG        cloud-store access log path
  ASKY_ALLOW_REPROVISION  access-control: permit master-key replacement
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
from pathlib import Path

import uvicorn

from .access_control import AccessControlConfig, AccessControlService, create_access_control_app
from .backends import FileBackend, HttpKVBackend, KVBackend, MemoryBackend
from .client import AccessControlClient
from .cloud_store import ObjectStore, create_store_app
from .kvserver import create_kv_app
from .writer_shield import WriterShieldConfig, WriterShieldService, create_writer_shield_app

_DEFAULT_PORTS = {"access-control": 8401, "writer-shield": 8402, "cloud-store": 8403, "kv": 8404}


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").lower() in ("1", "true", "yes", "on")


def _backend_from_env() -> KVBackend:
    spec = os.environ.get("ASKY_BACKEND", "memory")
    if spec == "memory":
        return MemoryBackend()
    if spec.startswith("file:"):
        return FileBackend(spec.removeprefix("file:"))
    if spec.startswith("http:"):
        return HttpKVBackend(spec.removeprefix("http:"))
    raise SystemExit(f"asky-serve: unsupported ASKY_BACKEND {spec!r}")


def _build_app(service: str):
    if service == "access-control":
        config = AccessControlConfig(
            allow_reprovision=_env_flag("ASKY_ALLOW_REPROVISION"),
            request_log_path=os.environ.get("ASKY_REQUEST_LOG"),
        )
        return create_access_control_app(AccessControlService(_backend_from_env(), config))
    if service == "writer-shield":
        ac_url = os.environ.get("ASKY_AC_URL")
        if not ac_url:
            raise SystemExit("asky-serve: writer-shield requires ASKY_AC_URL")
        checker_client = AccessControlClient(ac_url)
        config = WriterShieldConfig(
            bucket=os.environ.get("ASKY_BUCKET", "asky-data"),
            token_ttl=float(os.environ.get("ASKY_TOKEN_TTL", "60")),
            request_log_path=os.environ.get("ASKY_REQUEST_LOG"),
        )
        return create_writer_shield_app(WriterShieldService(checker_client.can_write, config))
    if service == "cloud-store":
        root = os.environ.get("ASKY_STORE_ROOT")
        secret = os.environ.get("ASKY_STORE_SECRET")
        if not root or not secret:
            raise SystemExit("asky-serve: cloud-store requires ASKY_STORE_ROOT and ASKY_STORE_SECRET")
        store = ObjectStore(root, write_secret=secret.encode(), log_path=os.environ.get("ASKY_STORE_LOG"))
        return create_store_app(store)
    if service == "kv":
        return create_kv_app(_backend_from_env())
    raise SystemExit(f"asky-serve: unknown service {service!r}")


def generate_self_signed_cert(out_dir: str | Path, hostname: str = "localhost") -> tuple[Path, Path]:
    """Write cert.pem/key.pem for loopback TLS deployments."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, hostname)])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now)
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.SubjectAlternativeName([x509.DNSName(hostname)]), critical=False)
        .sign(key, hashes.SHA256())
    )
    cert_path = out_dir / "cert.pem"
    key_path = out_dir / "key.pem"
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
    )
    key_path.chmod(0o600)
    return cert_path, key_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="asky-serve")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _DEFAULT_PORTS:
        sub.add_parser(name, help=f"run the {name} service")
    p_cert = sub.add_parser("gen-cert", help="write a self-signed cert/key pair")
    p_cert.add_argument("--out", default="./tls")
    p_cert.add_argument("--hostname", default="localhost")
    args = parser.parse_args(argv)

    if args.command == "gen-cert":
        cert, key = generate_self_signed_cert(args.out, args.hostname)
        print(f"{cert}\n{key}")
        return 0

    listen = os.environ.get("ASKY_LISTEN", f"127.0.0.1:{_DEFAULT_PORTS[args.command]}")
    host, _, port = listen.rpartition(":")
    cert = os.environ.get("ASKY_TLS_CERT")
    key = os.environ.get("ASKY_TLS_KEY")
    if not (cert and key) and not _env_flag("ASKY_ALLOW_PLAINTEXT"):
        print(
            "asky-serve: refusing to bind a plaintext listener; "
            "provide ASKY_TLS_CERT/ASKY_TLS_KEY or set ASKY_ALLOW_PLAINTEXT=1 "
            "for loopback testing",
            file=sys.stderr,
        )
        return 1

    app = _build_app(args.command)
    uvicorn.run(
        app,
        host=host or "127.0.0.1",
        port=int(port),
        log_level="warning",
        ssl_certfile=cert,
        ssl_keyfile=key,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
