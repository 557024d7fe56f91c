"""Bloom filters and Monkey-style per-level memory allocation.

Hashing uses double hashing ``g_i(x) = (h1 + i*h2) mod 2**64 mod m`` over a
seeded 128-bit SplitMix64-based mix of the key's two 64-bit words.  Bit ``p``
lives in byte ``p >> 3`` at position ``p & 7`` (LSB first), which is also the
on-disk layout.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .codec import seal, unseal
from .errors import CorruptFileError
from .keys import KEY_SIZE

MAGIC = b"LLSMBF01"
_HEADER = struct.Struct("<8sQIQ")  # magic, m, k, n_inserted

HASH_SEED_1 = 0x243F6A8885A308D3
HASH_SEED_2 = 0x13198A2E03707344

_U = numba.uint64
LN2 = math.log(2.0)


@numba.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
    return z ^ (z >> _U(31))


@numba.njit(inline="always")
def _hash_pair(hi, lo):
    h1 = mix64(hi ^ mix64(lo ^ _U(HASH_SEED_1)))
    h2 = mix64(lo ^ mix64(hi ^ _U(HASH_SEED_2))) | _U(1)
    return h1, h2


@numba.njit(inline="always")
def _contains_u(bits, m, k, hi, lo):
    h1, h2 = _hash_pair(hi, lo)
    mm = _U(m)
    for i in range(k):
        p = (h1 + _U(i) * h2) % mm
        if (bits[p >> _U(3)] >> (p & _U(7))) & _U(1) == _U(0):
            return False
    return True


@numba.njit(cache=True)
def bloom_contains(bits, m, k, hi, lo):
    """Membership probe; ``hi``/``lo`` are the key words as signed int64."""
    return _contains_u(bits, m, k, _U(hi), _U(lo))


@numba.njit(cache=True)
def _insert_many(bits, m, k, his, los):
    mm = _U(m)
    for j in range(his.shape[0]):
        h1, h2 = _hash_pair(_U(his[j]), _U(los[j]))
        for i in range(k):
            p = (h1 + _U(i) * h2) % mm
            bits[p >> _U(3)] |= np.uint8(1) << np.uint8(p & _U(7))


@numba.njit(cache=True)
def _contains_many(bits, m, k, his, los, out):
    for j in range(his.shape[0]):
        out[j] = _contains_u(bits, m, k, _U(his[j]), _U(los[j]))


def split_keys(keys: Sequence[bytes]) -> tuple[np.ndarray, np.ndarray]:
    """Big-endian (hi, lo) int64 word arrays for a batch of 16-byte keys."""
    if len(keys) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    raw = np.frombuffer(b"".join(keys), dtype=">i8").reshape(-1, 2)
    if raw.shape[0] != len(keys):
        raise ValueError(f"keys must be {KEY_SIZE} bytes each")
    return raw[:, 0].astype(np.int64), raw[:, 1].astype(np.int64)


def optimal_k(m: int, n: int) -> int:
    """Round-to-nearest of ``(m/n) ln 2`` with a floor of one."""
    return max(1, int(math.floor(m / n * LN2 + 0.5)))


class BloomFilter:
    """Bit array of ``m`` bits probed by ``k`` double-hashed positions."""

    __slots__ = ("m", "k", "n_inserted", "bits")

    def __init__(self, m: int, k: int, n_inserted: int = 0, bits: np.ndarray | None = None):
        if m <= 0 or k < 1:
            raise ValueError(f"need m > 0 and k >= 1, got m={m}, k={k}")
        self.m = int(m)
        self.k = int(k)
        self.n_inserted = int(n_inserted)
        nbytes = (self.m + 7) // 8
        if bits is None:
            bits = np.zeros(nbytes, dtype=np.uint8)
        elif bits.shape != (nbytes,) or bits.dtype != np.uint8:
            raise ValueError("bit array does not match m")
        self.bits = bits

    @classmethod
    def create(cls, n_expected: int, bits_per_key: float) -> "BloomFilter":
        if n_expected < 1 or not bits_per_key > 0:
            raise ValueError(
                f"n_expected must be >= 1 and bits_per_key > 0, got {n_expected}, {bits_per_key}")
        m = math.ceil(n_expected * bits_per_key)
        return cls(m, optimal_k(m, n_expected))

    @classmethod
    def from_keys(cls, keys: Sequence[bytes], bits_per_key: float) -> "BloomFilter":
        bf = cls.create(max(1, len(keys)), bits_per_key)
        bf.add_many(keys)
        return bf

    @classmethod
    def always_false(cls) -> "BloomFilter":
        """One-bit filter with nothing inserted; every probe answers False."""
        return cls(1, 1)

    def add(self, key: bytes) -> None:
        self.add_many([key])

    def add_many(self, keys: Sequence[bytes]) -> None:
        his, los = split_keys(keys)
        self.add_halves(his, los)

    def add_halves(self, his: np.ndarray, los: np.ndarray) -> None:
        _insert_many(self.bits, self.m, self.k, his, los)
        self.n_inserted += int(his.shape[0])

    def __contains__(self, key: bytes) -> bool:
        hi = int.from_bytes(key[:8], "big", signed=True)
        lo = int.from_bytes(key[8:], "big", signed=True)
        return bloom_contains(self.bits, self.m, self.k, hi, lo)

    def might_contain(self, key: bytes) -> bool:
        return key in self

    def contains_halves(self, hi: int, lo: int) -> bool:
        return bloom_contains(self.bits, self.m, self.k, hi, lo)

    def contains_many(self, keys: Sequence[bytes]) -> np.ndarray:
        his, los = split_keys(keys)
        out = np.zeros(his.shape[0], dtype=np.bool_)
        _contains_many(self.bits, self.m, self.k, his, los, out)
        return out

    @property
    def bits_per_key(self) -> float:
        return self.m / max(1, self.n_inserted)

    def expected_fpr(self) -> float:
        return theoretical_fpr(self.n_inserted, self.m, self.k)

    def to_bytes(self) -> bytes:
        return seal(_HEADER.pack(MAGIC, self.m, self.k, self.n_inserted) + self.bits.tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        body = unseal(data, MAGIC)
        if len(body) < _HEADER.size:
            raise CorruptFileError("truncated bloom filter header")
        _, m, k, n = _HEADER.unpack_from(body)
        payload = bytes(body[_HEADER.size:])
        if len(payload) != (m + 7) // 8:
            raise CorruptFileError("bloom filter bit array length does not match m")
        return cls(m, k, n, np.frombuffer(payload, dtype=np.uint8).copy())

    def serialized_size(self) -> int:
        return _HEADER.size + (self.m + 7) // 8 + 4

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return (self.m, self.k, self.n_inserted) == (other.m, other.k, other.n_inserted) and \
            bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"BloomFilter(m={self.m}, k={self.k}, n_inserted={self.n_inserted})"


def theoretical_fpr(n: int, m: int, k: int) -> float:
    """``(1 - exp(-k n / m)) ** k``."""
    if m <= 0 or k < 1:
        raise ValueError("need m > 0 and k >= 1")
    return (-math.expm1(-k * n / m)) ** k


def bits_per_key_for_fpr(fpr: float) -> float:
    """Bits per key that reach ``fpr`` at the optimal k: ``log2(1/f) / ln 2``."""
    if not 0 < fpr <= 1:
        raise ValueError("fpr must be in (0, 1]")
    return -math.log(fpr) / (LN2 * LN2)


def estimate_total_filter_bits(base_entries: int, size_ratio: int, levels: int,
                               bits_per_key: float) -> float:
    """Filter bits for levels ``1..levels`` holding ``base_entries * T**i`` keys each."""
    total = sum(base_entries * size_ratio ** i for i in range(1, levels + 1))
    bits = total * bits_per_key
    return int(bits) if float(bits).is_integer() else bits


@dataclass(frozen=True)
class LevelAllocation:
    level: int
    fpr: float
    bits_per_key: float


@dataclass(frozen=True)
class MonkeyAllocation:
    per_level: list[LevelAllocation]
    total_budget: float
    size_ratio: int
    level_entry_counts: list[int]
    level_probe_costs: list[float]
    bits_used: float = field(default=0.0)

    @property
    def expected_cost(self) -> float:
        """Expected wasted probe cost ``sum(f_i * c_i)``."""
        return sum(a.fpr * c for a, c in zip(self.per_level, self.level_probe_costs))


def _geometric_log_fprs(log_f1: float, n_levels: int, size_ratio: int) -> list[float]:
    return [min(0.0, log_f1 - i * math.log(size_ratio)) for i in range(n_levels)]


def _bits_for(log_fprs: Iterable[float], counts: Sequence[int]) -> float:
    # bisection runs on logarithms so tiny FPRs never underflow to zero
    return sum(n * (-lf / (LN2 * LN2)) for lf, n in zip(log_fprs, counts))


def monkey_allocate(level_entry_counts: Sequence[int], size_ratio: int, total_bits: float,
                    probe_costs: Sequence[float] | None = None,
                    first_level: int = 1) -> MonkeyAllocation:
    """Log-uniform FPR allocation ``f_{i+1} = f_i / T`` spending at most ``total_bits``.

    The shallowest level's FPR is found by bisection on its logarithm so the
    implied bits land in ``[0.99 M, M]``.
    """
    counts = [int(n) for n in level_entry_counts]
    if not counts or any(n <= 0 for n in counts) or size_ratio < 2 or not total_bits > 0:
        raise ValueError("need positive level counts, size_ratio >= 2 and a positive budget")
    costs = [1.0] * len(counts) if probe_costs is None else [float(c) for c in probe_costs]
    if len(costs) != len(counts):
        raise ValueError("probe_costs must match level_entry_counts")

    # all FPRs reach 1 (zero bits) once the deepest one does
    hi = (len(counts) - 1) * math.log(size_ratio)
    lo = min(-1.0, hi - 1.0)
    while _bits_for(_geometric_log_fprs(lo, len(counts), size_ratio), counts) <= total_bits:
        lo *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _bits_for(_geometric_log_fprs(mid, len(counts), size_ratio), counts) > total_bits:
            lo = mid
        else:
            hi = mid
    log_fprs = _geometric_log_fprs(hi, len(counts), size_ratio)
    per_level = [LevelAllocation(first_level + i, math.exp(lf), -lf / (LN2 * LN2))
                 for i, lf in enumerate(log_fprs)]
    used = sum(a.bits_per_key * n for a, n in zip(per_level, counts))
    return MonkeyAllocation(per_level, float(total_bits), size_ratio, counts, costs, used)
