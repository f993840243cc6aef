"""Versioned, checksummed container used for model and database files.

Layout: 8-byte magic, 1-byte kind, 1-byte version, 32-byte SHA-256 of the
payload, then the zlib-compressed canonical JSON payload.
"""

import hashlib
import json
import zlib

MAGIC = b"GLUECARD"
VERSION = 1
KIND_TREE = b"T"
KIND_DATABASE = b"D"
_HEADER = len(MAGIC) + 2 + 32


class FormatError(ValueError):
    pass


class VersionError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def dumps(doc, kind):
    payload = zlib.compress(json.dumps(doc, sort_keys=True, separators=(",", ":"),
                                       allow_nan=False).encode("utf-8"), 6)
    return MAGIC + kind + bytes([VERSION]) + hashlib.sha256(payload).digest() + payload


def loads(blob, kind):
    if len(blob) < _HEADER or not blob.startswith(MAGIC):
        if blob.startswith(MAGIC[: len(blob)]) and len(blob) < _HEADER:
            raise ChecksumError("checksum failure: file truncated")
        raise FormatError("not a gluecard file")
    if blob[8:9] != kind:
        raise FormatError(f"wrong file kind {blob[8:9]!r}, expected {kind!r}")
    if blob[9] != VERSION:
        raise VersionError(f"version mismatch: file has {blob[9]}, reader supports {VERSION}")
    digest, payload = blob[10:42], blob[42:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("checksum failure: file corrupted or truncated")
    return json.loads(zlib.decompress(payload).decode("utf-8"))
