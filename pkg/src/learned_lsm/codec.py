"""Shared helpers for the CRC32-sealed binary formats."""

from __future__ import annotations

import os
import zlib
from pathlib import Path

from .errors import CorruptFileError, StorageError


def seal(payload: bytes) -> bytes:
    """Append the little-endian CRC32 of ``payload``."""
    return payload + zlib.crc32(payload).to_bytes(4, "little")


def unseal(data: bytes, magic: bytes) -> memoryview:
    """Check magic and trailing CRC32; return the payload without the CRC."""
    if len(data) < len(magic) + 4:
        raise CorruptFileError("file too short")
    if data[: len(magic)] != magic:
        raise CorruptFileError(f"bad magic {bytes(data[:len(magic)])!r}, expected {magic!r}")
    body = memoryview(data)[:-4]
    crc = int.from_bytes(data[-4:], "little")
    if zlib.crc32(body) != crc:
        raise CorruptFileError("CRC32 mismatch")
    return body


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a temp name, fsync, then rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            tmp.unlink()
        except OSError:
            pass
        raise StorageError(f"writing {path}: {exc}") from exc
