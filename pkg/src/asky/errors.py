"""Exception taxonomy shared by every asky component.

The client CLI maps these onto process exit codes (see ``asky.cli``):
permission 2, integrity 3, not-a-recipient 4, transport 5.
"""

from __future__ import annotations


class AskyError(Exception):
    """Base class for all errors raised by this package."""


class PermissionDeniedError(AskyError):
    """Caller lacks the required role for the requested operation."""


class NotFoundError(AskyError):
    """Referenced user, group, member or object does not exist."""


class AlreadyExistsError(AskyError):
    """Attempt to create a user or group that already exists."""


class VersionConflictError(AskyError):
    """Compare-and-swap lost against a concurrent writer; safe to retry."""


class IntegrityError(AskyError):
    """Stored or transmitted data failed an authenticity check."""


class DecryptionError(IntegrityError):
    """Authenticated decryption failed: wrong key or tampered ciphertext."""


class PackageFormatError(AskyError):
    """Malformed envelope, package or stored-object encoding."""


class NotRecipientError(AskyError):
    """No fragment of the envelope opens under the caller's key."""


class TransportError(AskyError):
    """Network-level failure talking to a service."""


class AttestationError(AskyError):
    """Attestation handshake failed (measurement mismatch or bad channel)."""


class NotProvisionedError(AskyError):
    """Service operation invoked before attestation and provisioning."""
