"""Command-line client: user write/read flows and admin operations.

Exit codes: 0 ok, 1 general failure (including attestation), 2 permission
denied, 3 integrity (unauthenticated or malformed content), 4 not a
recipient, 5 transport.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .attestation import compute_measurement
from .client import (
    AccessControlClient,
    UserClient,
    WriterShieldClient,
    load_config,
    save_key_file,
)
from .errors import (
    AskyError,
    IntegrityError,
    NotRecipientError,
    PackageFormatError,
    PermissionDeniedError,
    TransportError,
)

EXIT_PERMISSION = 2
EXIT_INTEGRITY = 3
EXIT_NOT_RECIPIENT = 4
EXIT_TRANSPORT = 5


def _exit_code(exc: AskyError) -> int:
    if isinstance(exc, PermissionDeniedError):
        return EXIT_PERMISSION
    if isinstance(exc, (IntegrityError, PackageFormatError)):
        return EXIT_INTEGRITY
    if isinstance(exc, NotRecipientError):
        return EXIT_NOT_RECIPIENT
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT
    return 1


def _state_path(args) -> Path:
    return Path(args.state) if args.state else Path(str(args.config) + ".state.json")


def _load_state(args) -> dict:
    path = _state_path(args)
    if not path.exists():
        return {}
    return json.loads(path.read_text())


def _save_state(args, state: dict) -> None:
    path = _state_path(args)
    path.write_text(json.dumps(state, indent=2) + "\n")
    path.chmod(0o600)


def _expected_measurement(args) -> bytes:
    if args.expected_measurement:
        return bytes.fromhex(args.expected_measurement)
    return compute_measurement()


def _admin_ac_client(args) -> AccessControlClient:
    config = load_config(args.config)
    client = AccessControlClient(config.access_control_url)
    state = _load_state(args)
    if "session" in state:
        client.use_session(bytes.fromhex(state["session"]))
    return client


def cmd_write(args) -> int:
    client = UserClient(config=load_config(args.config))
    object_key = client.write_file(args.group, args.path)
    print(object_key)
    return 0


def cmd_read(args) -> int:
    client = UserClient(config=load_config(args.config))
    data = client.read_bytes(args.object_key)
    if args.output == "-":
        sys.stdout.buffer.write(data)
    else:
        Path(args.output).write_bytes(data)
    return 0


def cmd_attest(args) -> int:
    config = load_config(args.config)
    expected = _expected_measurement(args)
    results = {}
    targets = []
    if args.service in ("access-control", "both"):
        targets.append(("access-control", AccessControlClient(config.access_control_url)))
    if args.service in ("writer-shield", "both"):
        targets.append(("writer-shield", WriterShieldClient(config.writer_shield_url)))
    ok = True
    for name, client in targets:
        measurement = client.fetch_measurement()
        matches = measurement == expected
        ok = ok and matches
        results[name] = {"measurement": measurement.hex(), "matches": matches}
    print(json.dumps(results, indent=2))
    return 0 if ok else 1


def cmd_provision(args) -> int:
    config = load_config(args.config)
    expected = _expected_measurement(args)
    master_key = bytes.fromhex(args.master_key) if args.master_key else os.urandom(32)
    credential = bytes.fromhex(args.admin_credential) if args.admin_credential else os.urandom(32)
    signing_seed = bytes.fromhex(args.signing_seed) if args.signing_seed else os.urandom(32)
    store_secret = (args.store_secret or os.environ.get("ASKY_STORE_SECRET", "")).encode()
    if not store_secret:
        print("provision: missing --store-secret (or ASKY_STORE_SECRET)", file=sys.stderr)
        return 1

    ac = AccessControlClient(config.access_control_url)
    session = ac.attest_and_provision(master_key, credential, expected_measurement=expected)
    ws = WriterShieldClient(config.writer_shield_url)
    verification_key = ws.attest_and_provision(
        signing_seed=signing_seed,
        store_url=config.storage_url,
        store_secret=store_secret,
        admin_credential=credential,
        expected_measurement=expected,
    )
    _save_state(args, {"session": session.hex(), "verification_key": verification_key.hex()})
    summary = {
        "verification_key": verification_key.hex(),
        "state_file": str(_state_path(args)),
    }
    if not args.master_key:
        summary["master_key"] = master_key.hex()
    if not args.admin_credential:
        summary["admin_credential"] = credential.hex()
    print(json.dumps(summary, indent=2))
    return 0


def cmd_create_user(args) -> int:
    client = _admin_ac_client(args)
    usk, credential = client.create_user(args.name)
    if args.key_out:
        save_key_file(args.key_out, usk)
    print(json.dumps({"user": args.name, "key": usk.hex(), "credential": credential.hex()}))
    return 0


def cmd_create_group(args) -> int:
    _admin_ac_client(args).create_group(args.name)
    print(json.dumps({"group": args.name}))
    return 0


def cmd_add_member(args) -> int:
    roles = [r.strip() for r in args.roles.split(",") if r.strip()]
    _admin_ac_client(args).add_member(args.group, args.user, roles)
    print(json.dumps({"group": args.group, "user": args.user, "roles": roles}))
    return 0


def cmd_revoke_member(args) -> int:
    _admin_ac_client(args).revoke_member(args.group, args.user)
    print(json.dumps({"group": args.group, "revoked": args.user}))
    return 0


def cmd_fetch_key(args) -> int:
    config = load_config(args.config)
    client = AccessControlClient(config.access_control_url)
    usk = client.fetch_user_key(args.name, bytes.fromhex(args.credential))
    if args.key_out:
        save_key_file(args.key_out, usk)
        print(json.dumps({"user": args.name, "key_file": args.key_out}))
    else:
        print(json.dumps({"user": args.name, "key": usk.hex()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asky", description="Anonymous group file sharing client")
    parser.add_argument("--config", required=True, help="path to a key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_write = sub.add_parser("write", help="encrypt and publish a file to a group")
    p_write.add_argument("--group", required=True)
    p_write.add_argument("path")
    p_write.set_defaults(func=cmd_write)

    p_read = sub.add_parser("read", help="download, verify and decrypt an object")
    p_read.add_argument("object_key")
    p_read.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")
    p_read.set_defaults(func=cmd_read)

    p_admin = sub.add_parser("admin", help="administrator operations")
    admin_sub = p_admin.add_subparsers(dest="admin_command", required=True)

    def _admin(name, func, configure=None):
        p = admin_sub.add_parser(name)
        p.add_argument("--state", default=None, help="admin state file (default: <config>.state.json)")
        p.add_argument("--expected-measurement", default=None, help="hex; defaults to this build's")
        if configure:
            configure(p)
        p.set_defaults(func=func)
        return p

    def _attest_args(p):
        p.add_argument("--service", choices=["access-control", "writer-shield", "both"], default="both")

    _admin("attest", cmd_attest, _attest_args)

    def _provision_args(p):
        p.add_argument("--master-key", default=None, help="hex; generated when omitted")
        p.add_argument("--admin-credential", default=None, help="hex; generated when omitted")
        p.add_argument("--signing-seed", default=None, help="hex; generated when omitted")
        p.add_argument("--store-secret", default=None, help="storage write secret")

    _admin("provision", cmd_provision, _provision_args)

    def _create_user_args(p):
        p.add_argument("name")
        p.add_argument("--key-out", default=None, help="write the user key file here (mode 600)")

    _admin("create-user", cmd_create_user, _create_user_args)
    _admin("create-group", cmd_create_group, lambda p: p.add_argument("name"))

    def _member_args(p):
        p.add_argument("group")
        p.add_argument("user")

    _admin("add-member", cmd_add_member, lambda p: (_member_args(p), p.add_argument("--roles", default="reader")))
    _admin("revoke-member", cmd_revoke_member, _member_args)

    def _fetch_key_args(p):
        p.add_argument("name")
        p.add_argument("--credential", required=True, help="hex bootstrap credential")
        p.add_argument("--key-out", default=None)

    _admin("fetch-key", cmd_fetch_key, _fetch_key_args)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AskyError as exc:
        print(f"asky: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (ValueError, OSError) as exc:
        print(f"asky: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
