"""Binary container framing shared by trajectory sets and model checkpoints.

Layout: 8-byte magic, u32 version, u32 header length, JSON header (utf-8,
sorted keys), raw payload, u32 CRC32 of the payload. All integers and floats
little-endian; payload floats are float64.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

__all__ = ["FormatError", "write_container", "read_container", "atomic_write_bytes"]

_FIXED = struct.Struct("<II")  # version, header length


class FormatError(ValueError):
    """Container violates the framing contract (magic/version/CRC/length)."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so errors never leave partial files."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_container(path, magic: bytes, version: int, header: dict, payload: bytes) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        [
            magic,
            _FIXED.pack(version, len(header_bytes)),
            header_bytes,
            payload,
            struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
        ]
    )
    atomic_write_bytes(path, blob)


def read_container(path, magic: bytes, version: int) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 + _FIXED.size:
        raise FormatError(f"{path}: truncated file (no header)")
    if blob[:8] != magic:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {magic!r}")
    got_version, header_len = _FIXED.unpack_from(blob, 8)
    if got_version != version:
        raise FormatError(f"{path}: unsupported version {got_version}, expected {version}")
    start = 8 + _FIXED.size
    if len(blob) < start + header_len + 4:
        raise FormatError(f"{path}: truncated file (header or checksum missing)")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    payload = blob[start + header_len : -4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: payload checksum mismatch")
    return header, payload
