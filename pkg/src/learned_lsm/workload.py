"""Deterministic corpus and GET-workload generation.

All randomness comes from SplitMix64 (Steele, Lea & Flood 2014)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2**64)
    return z ^ (z >> 31)

The i-th output (i = 1, 2, ...) of a stream seeded with ``s`` is therefore
``mix(s + i * gamma)``, which the corpus generator evaluates in bulk.  A corpus
pair consumes 15 outputs: two for the key (high word first, both big-endian)
and thirteen for the value (104 bytes, truncated to 100).  A pair whose key
repeats an earlier key is discarded and the next 15 outputs are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .keys import ENTRY_SIZE, KEY_SIZE, VALUE_SIZE, int_to_key

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
WORDS_PER_PAIR = 15

KINDS = ("random", "sequential", "level0", "level1", "level2", "level3")
_KIND_SALT = {kind: i + 1 for i, kind in enumerate(KINDS)}
ABSENT_SALT = 0xA5A5_0000_0000_0001


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n

    def unit(self) -> float:
        return (self.next() >> 11) * (1.0 / (1 << 53))

    def key(self) -> bytes:
        return self.next().to_bytes(8, "big") + self.next().to_bytes(8, "big")


def splitmix64_block(seed: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start+1 .. start+count`` of the stream seeded with ``seed``."""
    i = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + i * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@dataclass
class Corpus:
    seed: int
    n_pairs: int
    keys: list[bytes] = field(repr=False)
    values: list[bytes] = field(repr=False)

    def __iter__(self) -> Iterator[tuple[bytes, bytes]]:
        return zip(self.keys, self.values)

    def __len__(self) -> int:
        return self.n_pairs

    @property
    def raw_bytes(self) -> int:
        return self.n_pairs * ENTRY_SIZE

    def as_dict(self) -> dict[bytes, bytes]:
        return dict(zip(self.keys, self.values))

    def write(self, path: str | Path) -> None:
        """Raw 116-byte records."""
        with open(path, "wb") as fh:
            for k, v in self:
                fh.write(k + v)

    @classmethod
    def read(cls, path: str | Path, seed: int = 0) -> "Corpus":
        data = Path(path).read_bytes()
        if len(data) % ENTRY_SIZE:
            raise ValueError(f"corpus size {len(data)} is not a multiple of {ENTRY_SIZE}")
        keys = [data[o:o + KEY_SIZE] for o in range(0, len(data), ENTRY_SIZE)]
        values = [data[o + KEY_SIZE:o + ENTRY_SIZE] for o in range(0, len(data), ENTRY_SIZE)]
        return cls(seed, len(keys), keys, values)


def generate_corpus(seed: int, n_pairs: int, chunk: int = 65536) -> Corpus:
    """``n_pairs`` unique uniform random keys with pseudorandom values."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    keys: list[bytes] = []
    values: list[bytes] = []
    seen: set[bytes] = set()
    attempt = 0
    while len(keys) < n_pairs:
        want = min(chunk, n_pairs - len(keys))
        words = splitmix64_block(seed, attempt * WORDS_PER_PAIR, want * WORDS_PER_PAIR)
        raw = words.astype(">u8").tobytes()
        attempt += want
        for j in range(want):
            base = j * WORDS_PER_PAIR * 8
            k = raw[base:base + KEY_SIZE]
            if k in seen:
                continue
            seen.add(k)
            keys.append(k)
            values.append(raw[base + KEY_SIZE:base + KEY_SIZE + VALUE_SIZE])
    return Corpus(seed, n_pairs, keys, values)


class AbsentKeySource:
    """Fresh uniform keys guaranteed not to be in ``exclude``."""

    def __init__(self, seed: int, exclude: Mapping[bytes, object] | set[bytes]):
        self._rng = SplitMix64(seed ^ ABSENT_SALT)
        self._exclude = exclude
        self._issued: set[bytes] = set()

    def draw(self) -> bytes:
        while True:
            k = self._rng.key()
            if k not in self._exclude and k not in self._issued:
                self._issued.add(k)
                return k

    def take(self, n: int) -> list[bytes]:
        return [self.draw() for _ in range(n)]


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    n_ops: int
    seed: int = 7
    present_fraction: float = 0.8

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}; expected one of {KINDS}")
        if self.n_ops < 0 or not 0.0 <= self.present_fraction <= 1.0:
            raise ValueError("n_ops must be >= 0 and present_fraction in [0, 1]")

    @property
    def target_level(self) -> int | None:
        return int(self.kind[-1]) if self.kind.startswith("level") else None


def _residency_of(source) -> Mapping[bytes, int]:
    if hasattr(source, "residency"):
        return source.residency()
    return source


def generate_workload(spec: WorkloadSpec, source) -> list[bytes]:
    """Probe keys for ``spec`` against a tree (or its residency map key -> level)."""
    residency = _residency_of(source)
    rng = SplitMix64(spec.seed * 0x100000001B3 + _KIND_SALT[spec.kind])
    if spec.kind == "sequential":
        origin = int.from_bytes(rng.key(), "big")
        return [int_to_key((origin + i) & ((1 << 128) - 1)) for i in range(spec.n_ops)]
    target = spec.target_level
    if target is None:
        pool: Sequence[bytes] = list(residency)
    else:
        pool = [k for k, lv in residency.items() if lv == target]
        if not pool:
            raise ValueError(f"level {target} holds no keys")
    absent = AbsentKeySource(spec.seed + _KIND_SALT[spec.kind], residency)
    out = []
    for _ in range(spec.n_ops):
        if pool and rng.unit() < spec.present_fraction:
            out.append(pool[rng.below(len(pool))])
        else:
            out.append(absent.draw())
    return out


def write_workload(path: str | Path, keys: Sequence[bytes]) -> None:
    Path(path).write_text("".join(k.hex() + "\n" for k in keys))


def read_workload(path: str | Path) -> list[bytes]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            k = bytes.fromhex(line)
            if len(k) != KEY_SIZE:
                raise ValueError(f"workload key {line!r} is not {KEY_SIZE} bytes")
            out.append(k)
    return out


def sample(seq: Sequence, n: int, seed: int) -> list:
    """Deterministic sample without replacement (order of ``seq`` preserved)."""
    if n >= len(seq):
        return list(seq)
    rng = SplitMix64(seed)
    idx = list(range(len(seq)))
    for i in range(n):
        j = i + rng.below(len(idx) - i)
        idx[i], idx[j] = idx[j], idx[i]
    return [seq[i] for i in sorted(idx[:n])]
