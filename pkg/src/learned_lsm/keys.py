"""Fixed-width key/value records and their integer views."""

from __future__ import annotations

KEY_SIZE = 16
VALUE_SIZE = 100
ENTRY_SIZE = KEY_SIZE + VALUE_SIZE

_MASK64 = (1 << 64) - 1
_SIGN64 = 1 << 63


def check_key(key: bytes) -> None:
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes, got {len(key)}")


def check_value(value: bytes) -> None:
    if len(value) != VALUE_SIZE:
        raise ValueError(f"value must be {VALUE_SIZE} bytes, got {len(value)}")


def key_to_int(key: bytes) -> int:
    """Big-endian 128-bit unsigned interpretation of ``key``."""
    return int.from_bytes(key, "big")


def int_to_key(x: int) -> bytes:
    return x.to_bytes(KEY_SIZE, "big")


def key_halves(key: bytes) -> tuple[int, int]:
    """Return the (high, low) 64-bit words of ``key`` as *signed* int64.

    The numba kernels take int64 arguments and reinterpret them as uint64, so
    every key maps to a single compiled signature.
    """
    return (int.from_bytes(key[:8], "big", signed=True),
            int.from_bytes(key[8:], "big", signed=True))


def to_signed64(x: int) -> int:
    x &= _MASK64
    return x - (1 << 64) if x & _SIGN64 else x
