"""Atomic file writes and the shared binary record framing.

Both on-disk formats (dataset records, checkpoints) start with a 16-byte
header: 4-byte magic, little-endian u32 version, little-endian u64 payload
length. All array payloads are little-endian binary32.
"""

from __future__ import annotations

import os
import struct

__all__ = ["atomic_write_bytes", "atomic_write_text", "pack_record", "unpack_record"]

_HEADER = struct.Struct("<4sIQ")
HEADER_SIZE = _HEADER.size  # 16


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def pack_record(magic: bytes, version: int, payload: bytes) -> bytes:
    if len(magic) != 4:
        raise ValueError(f"record magic must be 4 bytes, got {magic!r}")
    return _HEADER.pack(magic, version, len(payload)) + payload


def unpack_record(blob: bytes, magic: bytes, version: int) -> bytes:
    """Validate framing and return the payload; any mismatch is rejected."""
    if len(blob) < HEADER_SIZE:
        raise ValueError(f"record truncated: {len(blob)} bytes is smaller than the header")
    got_magic, got_version, length = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise ValueError(f"record magic mismatch: expected {magic!r}, got {got_magic!r}")
    if got_version != version:
        raise ValueError(f"record version mismatch: expected {version}, got {got_version}")
    if len(blob) != HEADER_SIZE + length:
        raise ValueError(f"record truncated: header promises {length} payload bytes, "
                         f"file carries {len(blob) - HEADER_SIZE}")
    return blob[HEADER_SIZE:]
