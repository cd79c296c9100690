"""Anonymous, confidential group file sharing over untrusted object storage.

The package is organized as a library first; the ``asky`` and ``asky-bench``
command-line tools and the ``asky-serve`` service launcher are thin wrappers
over it.  See README.md for a tour and ``demos/`` for narrative walkthroughs.
"""

from .envelope import (
    DecryptStats,
    Envelope,
    EnvelopeMode,
    Fragment,
    build_envelope,
    build_envelope_indexed,
    compute_label,
    decrypt_content,
    encrypt_content,
    frame_package,
    generate_file_key,
    generate_user_key,
    open_envelope,
    open_envelope_indexed,
    open_envelope_linear,
    open_fragment,
    seal_fragment,
    split_package,
)
from .errors import (
    AlreadyExistsError,
    AskyError,
    AttestationError,
    DecryptionError,
    IntegrityError,
    NotFoundError,
    NotProvisionedError,
    NotRecipientError,
    PackageFormatError,
    PermissionDeniedError,
    TransportError,
    VersionConflictError,
)

__version__ = "0.1.0"
