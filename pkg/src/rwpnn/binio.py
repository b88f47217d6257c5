"""Versioned little-endian container shared by the model files.

Layout::

    magic      8 bytes
    version    uint32
    length     uint64   payload byte count
    payload    `length` bytes
    crc32      uint32   over payload
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

_HEADER = struct.Struct("<8sIQ")
_TRAILER = struct.Struct("<I")


class ModelFileError(ValueError):
    pass


class ModelFormatError(ModelFileError):
    """Wrong magic bytes: not a file of the expected kind."""


class ModelVersionError(ModelFileError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


class ModelChecksumError(ModelFileError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def pack(magic: bytes, version: int, payload: bytes) -> bytes:
    assert len(magic) == 8
    return (_HEADER.pack(magic, version, len(payload)) + payload
            + _TRAILER.pack(zlib.crc32(payload) & 0xFFFFFFFF))


def unpack(blob: bytes, magic: bytes, version: int) -> bytes:
    if len(blob) < 8 or blob[:8] != magic:
        raise ModelFormatError(f"bad magic {blob[:8]!r}, expected {magic!r}")
    if len(blob) < _HEADER.size:
        raise ModelTruncatedError("file ends inside the header")
    _, got_version, length = _HEADER.unpack_from(blob)
    if got_version != version:
        raise ModelVersionError(
            f"unsupported format version {got_version}, expected {version}")
    end = _HEADER.size + length
    if len(blob) < end + _TRAILER.size:
        raise ModelTruncatedError(
            f"file truncated: {len(blob)} bytes, expected {end + _TRAILER.size}")
    payload = blob[_HEADER.size:end]
    (crc,) = _TRAILER.unpack_from(blob, end)
    if crc != zlib.crc32(payload) & 0xFFFFFFFF:
        raise ModelChecksumError("checksum mismatch")
    return payload


class Reader:
    """Sequential reader over a payload; short reads mean a truncated file."""

    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, fmt: str):
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > len(self.buf):
            raise ModelTruncatedError("payload shorter than its declared fields")
        vals = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return vals

    def f64_array(self, count: int):
        nbytes = 8 * count
        if self.pos + nbytes > len(self.buf):
            raise ModelTruncatedError("payload shorter than its declared arrays")
        arr = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos)
        self.pos += nbytes
        return arr.astype(np.float64)
