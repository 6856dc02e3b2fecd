"""
SPDX-License-Identifier: BSD-2
"""

from cryptography.hazmat.backends import default_backend
from cryptography.hazmat.primitives import hashes

from .IFLOW_Exception import IFLOW_Exception
from .types import IFLOW_LAYER, IFLOW_RC

DEFAULT_DIGEST = "sha256"

_digesttable = (
    ("sha256", hashes.SHA256),
    ("sha384", hashes.SHA384),
    ("sha512", hashes.SHA512),
    ("sha3_256", hashes.SHA3_256),
)


def _get_digest(name):
    for (digestname, d) in _digesttable:
        if digestname == name:
            return d
    return None


def digest_bytes(data, name=DEFAULT_DIGEST) -> str:
    """Hex digest of ``data``.

    Raises:
        IFLOW_Exception: BAD_VALUE for an unknown digest name.
    """
    dt = _get_digest(name)
    if dt is None:
        raise IFLOW_Exception(
            IFLOW_RC.make(IFLOW_LAYER.CLI, IFLOW_RC.BAD_VALUE),
            f"unsupported digest {name!r}",
        )
    d = hashes.Hash(dt(), backend=default_backend())
    d.update(bytes(data))
    return d.finalize().hex()


def digest_file(path, name=DEFAULT_DIGEST) -> str:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IFLOW_Exception(
            IFLOW_RC.make(IFLOW_LAYER.CLI, IFLOW_RC.IO_ERROR), f"{path}: {e.strerror}"
        )
    return digest_bytes(data, name)
