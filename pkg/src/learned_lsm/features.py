"""Key -> feature vector transforms.

Two fixed schemas are defined.  ``RICH45`` feeds the per-level classifiers and
``LEAN12`` the learned Bloom filters.  Both treat the key as a big-endian
128-bit unsigned integer ``x``; floating-point work uses
``float(x) = float(hi) * 2**64 + float(lo)``.

RICH45 order::

     0- 2  x, x**2, x**3
     3- 5  log(1+x), log2(1+x), sqrt(x)
     6- 8  sin, cos, tan of x * 2pi / 2**128
     9-11  sin, cos, tan of (x mod 10**6)          (tan clamped to +-1e12)
    12-15  decimal digit count, digit sum, leading digit, trailing digit
    16-24  x mod p, p in (2, 3, 5, 7, 10, 16, 64, 97, 1000)
    25-40  one-hot flag of x >> 124 (16 equal slices of the key space)
    41-44  popcount, index of most significant set bit (-1 for 0),
           leading zero bits, byte-wise sum

LEAN12 order::

     0- 1  log(1+x), log2(1+x)
     2- 3  sin, cos of x * 2pi / 2**128
     4- 6  popcount, msb index, leading zero bits
     7- 9  x mod 2, 10, 97
    10-11  top byte, bottom byte
"""

from __future__ import annotations

import math
from typing import Sequence

import numba
import numpy as np

from .errors import SchemaMismatchError

RICH45 = "RICH45"
LEAN12 = "LEAN12"
SCHEMA_WIDTH = {RICH45: 45, LEAN12: 12}

TWO64 = 18446744073709551616.0
_ANGLE = 2.0 * math.pi / 2.0 ** 128
_TAN_CLAMP = 1e12

_U = numba.uint64


@numba.njit(inline="always")
def _popcount64(v):
    v = v - ((v >> _U(1)) & _U(0x5555555555555555))
    v = (v & _U(0x3333333333333333)) + ((v >> _U(2)) & _U(0x3333333333333333))
    v = (v + (v >> _U(4))) & _U(0x0F0F0F0F0F0F0F0F)
    return (v * _U(0x0101010101010101)) >> _U(56)


@numba.njit(inline="always")
def _bit_length64(v):
    n = 0
    while v != _U(0):
        v >>= _U(1)
        n += 1
    return n


@numba.njit(inline="always")
def _mod128(hi, lo, p):
    pp = _U(p)
    two64 = ((_U(0xFFFFFFFFFFFFFFFF) % pp) + _U(1)) % pp
    return ((hi % pp) * two64 + lo % pp) % pp


@numba.njit(inline="always")
def _lean_into(hi, lo, out):
    xf = np.float64(hi) * TWO64 + np.float64(lo)
    a = xf * _ANGLE
    out[0] = math.log1p(xf)
    out[1] = math.log2(1.0 + xf)
    out[2] = math.sin(a)
    out[3] = math.cos(a)
    out[4] = np.float64(_popcount64(hi) + _popcount64(lo))
    if hi != _U(0):
        bl = 64 + _bit_length64(hi)
    else:
        bl = _bit_length64(lo)
    out[5] = np.float64(bl - 1)
    out[6] = np.float64(128 - bl)
    out[7] = np.float64(lo & _U(1))
    out[8] = np.float64(_mod128(hi, lo, 10))
    out[9] = np.float64(_mod128(hi, lo, 97))
    out[10] = np.float64(hi >> _U(56))
    out[11] = np.float64(lo & _U(0xFF))


@numba.njit(inline="always")
def _clamped_tan(a):
    return min(_TAN_CLAMP, max(-_TAN_CLAMP, math.tan(a)))


@numba.njit(inline="always")
def _divmod10(hi, lo):
    """(x // 10, x % 10) for the 128-bit ``x = hi:lo``, via 32-bit limbs."""
    ten = _U(10)
    qh = hi // ten
    r = hi % ten
    t = (r << _U(32)) | (lo >> _U(32))
    q1 = t // ten
    r = t % ten
    t = (r << _U(32)) | (lo & _U(0xFFFFFFFF))
    q0 = t // ten
    return qh, (q1 << _U(32)) | q0, t % ten


@numba.njit(inline="always")
def _rich_into(hi, lo, out):
    xf = np.float64(hi) * TWO64 + np.float64(lo)
    a = xf * _ANGLE
    small = np.float64(_mod128(hi, lo, 1000000))
    out[0] = xf
    out[1] = xf * xf
    out[2] = xf * xf * xf
    out[3] = math.log1p(xf)
    out[4] = math.log2(1.0 + xf)
    out[5] = math.sqrt(xf)
    out[6] = math.sin(a)
    out[7] = math.cos(a)
    out[8] = _clamped_tan(a)
    out[9] = math.sin(small)
    out[10] = math.cos(small)
    out[11] = _clamped_tan(small)
    n_digits = 0
    digit_sum = 0
    last = _U(0)
    first = _U(0)
    qh, ql = hi, lo
    while True:
        qh, ql, d = _divmod10(qh, ql)
        if n_digits == 0:
            last = d
        first = d
        digit_sum += np.int64(d)
        n_digits += 1
        if qh == _U(0) and ql == _U(0):
            break
    out[12] = np.float64(n_digits)
    out[13] = np.float64(digit_sum)
    out[14] = np.float64(first)
    out[15] = np.float64(last)
    out[16] = np.float64(lo & _U(1))
    out[17] = np.float64(_mod128(hi, lo, 3))
    out[18] = np.float64(_mod128(hi, lo, 5))
    out[19] = np.float64(_mod128(hi, lo, 7))
    out[20] = np.float64(_mod128(hi, lo, 10))
    out[21] = np.float64(lo & _U(15))
    out[22] = np.float64(lo & _U(63))
    out[23] = np.float64(_mod128(hi, lo, 97))
    out[24] = np.float64(_mod128(hi, lo, 1000))
    for b in range(16):
        out[25 + b] = 0.0
    out[25 + np.int64(hi >> _U(60))] = 1.0
    out[41] = np.float64(_popcount64(hi) + _popcount64(lo))
    if hi != _U(0):
        bl = 64 + _bit_length64(hi)
    else:
        bl = _bit_length64(lo)
    out[42] = np.float64(bl - 1)
    out[43] = np.float64(128 - bl)
    byte_sum = _U(0)
    for w in (hi, lo):
        for j in range(8):
            byte_sum += (w >> _U(8 * j)) & _U(0xFF)
    out[44] = np.float64(byte_sum)


@numba.njit(cache=True)
def rich_features_halves(hi, lo, out):
    """RICH45 of the key with signed int64 words ``hi``/``lo`` written into ``out``."""
    _rich_into(_U(hi), _U(lo), out)


@numba.njit(cache=True)
def _rich_batch(his, los, out):
    for j in range(his.shape[0]):
        _rich_into(_U(his[j]), _U(los[j]), out[j])


def extract_rich(key: bytes) -> np.ndarray:
    """The 45 RICH45 features of ``key``."""
    out = np.empty(45, dtype=np.float64)
    rich_features_halves(int.from_bytes(key[:8], "big", signed=True),
                         int.from_bytes(key[8:], "big", signed=True), out)
    return out


@numba.njit(cache=True)
def lean_features_halves(hi, lo, out):
    """LEAN12 of the key with signed int64 words ``hi``/``lo`` written into ``out``."""
    _lean_into(_U(hi), _U(lo), out)


@numba.njit(cache=True)
def _lean_batch(his, los, out):
    for j in range(his.shape[0]):
        _lean_into(_U(his[j]), _U(los[j]), out[j])


def extract_lean(key: bytes) -> np.ndarray:
    """The 12 LEAN12 features of ``key``."""
    out = np.empty(12, dtype=np.float64)
    lean_features_halves(int.from_bytes(key[:8], "big", signed=True),
                         int.from_bytes(key[8:], "big", signed=True), out)
    return out


def feature_matrix(keys: Sequence[bytes], schema: str) -> np.ndarray:
    """Stack features of ``keys`` row-wise under ``schema``."""
    if schema == LEAN12:
        from .bloom import split_keys
        his, los = split_keys(keys)
        out = np.empty((len(keys), 12), dtype=np.float64)
        _lean_batch(his, los, out)
        return out
    if schema == RICH45:
        from .bloom import split_keys
        his, los = split_keys(keys)
        out = np.empty((len(keys), 45), dtype=np.float64)
        _rich_batch(his, los, out)
        return out
    raise SchemaMismatchError(f"unknown feature schema {schema!r}")


def extract(key: bytes, schema: str) -> np.ndarray:
    if schema == LEAN12:
        return extract_lean(key)
    if schema == RICH45:
        return extract_rich(key)
    raise SchemaMismatchError(f"unknown feature schema {schema!r}")
