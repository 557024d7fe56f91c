"""Sandwich-style learned Bloom filters and the GET path that uses them.

A level's membership test is ``model accepts key OR backup filter contains
key``, where the backup holds exactly the level keys the model rejected at
build time, so no built-over key is ever reported absent.

Sidecar file layout (little-endian)::

    8s  magic b"LLSMLBF1"
    Q   run id the filter was built for
    Q   trained_on (positives covered)
    Q   model blob length, then the model file bytes (LLSMGBT1)
    Q   backup blob length, then the Bloom filter file bytes (LLSMBF01)
    d   delta (false-negative rate of the model on the covered keys)
    I   CRC32 of every preceding byte
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numba
import numpy as np

from .bloom import BloomFilter, _contains_u, split_keys
from .codec import seal, unseal
from .errors import CorruptFileError, SingleClassError
from .features import LEAN12, _lean_into, feature_matrix
from .gbt import LEAN_PARAMS, GBTModel, GBTParams, accepts_flat, false_negatives, train
from .lsm import LookupStats, LSMTree

log = logging.getLogger(__name__)

MAGIC = b"LLSMLBF1"
_U = numba.uint64
_Q = struct.Struct("<Q")

REJECT, MODEL_ACCEPT, BACKUP_ACCEPT = 0, 1, 2


# Not cached: numba's cache only tracks this file, and the kernel inlines code
# from features, gbt and bloom, so a cached copy could go stale silently.
@numba.njit
def learned_query_halves(hi, lo, plan, meta, bits):
    """0 = rejected, 1 = model accepts, 2 = model rejects but the backup contains the key.

    ``meta`` is ``[depth, initial_score, learning_rate, threshold, backup m, backup k]``.
    """
    x = np.empty(12, np.float64)
    uh = _U(hi)
    ul = _U(lo)
    _lean_into(uh, ul, x)
    if accepts_flat(x, plan, np.int64(meta[0]), meta[1], meta[2], meta[3]):
        return 1
    if _contains_u(bits, np.int64(meta[4]), np.int64(meta[5]), uh, ul):
        return 2
    return 0


@dataclass
class LearnedFilter:
    model: GBTModel
    backup: BloomFilter
    trained_on: int
    delta: float
    run_id: int = 0

    def __post_init__(self) -> None:
        m, b = self.model, self.backup
        self._plan = m.plan
        self._bits = b.bits
        self._meta = np.array([m.depth, m.initial_score, m.params.learning_rate,
                               m.params.threshold, b.m, b.k], dtype=np.float64)

    def query_halves(self, hi: int, lo: int) -> int:
        return learned_query_halves(hi, lo, self._plan, self._meta, self._bits)

    def __contains__(self, key: bytes) -> bool:
        return self.query_halves(int.from_bytes(key[:8], "big", signed=True),
                                 int.from_bytes(key[8:], "big", signed=True)) != REJECT

    def contains_many(self, keys: Sequence[bytes]) -> np.ndarray:
        accepted = self.model.decide(feature_matrix(keys, LEAN12)).astype(bool)
        return accepted | self.backup.contains_many(keys)

    @property
    def model_bytes(self) -> bytes:
        return self.model.to_bytes()

    def to_bytes(self) -> bytes:
        mb, bb = self.model.to_bytes(), self.backup.to_bytes()
        return seal(MAGIC + _Q.pack(self.run_id) + _Q.pack(self.trained_on)
                    + _Q.pack(len(mb)) + mb + _Q.pack(len(bb)) + bb + struct.pack("<d", self.delta))

    @classmethod
    def from_bytes(cls, data: bytes) -> "LearnedFilter":
        body = unseal(data, MAGIC)
        try:
            off = len(MAGIC)
            (run_id,) = _Q.unpack_from(body, off)
            (trained_on,) = _Q.unpack_from(body, off + 8)
            (n,) = _Q.unpack_from(body, off + 16)
            off += 24
            model = GBTModel.from_bytes(bytes(body[off:off + n]))
            off += n
            (n,) = _Q.unpack_from(body, off)
            off += 8
            backup = BloomFilter.from_bytes(bytes(body[off:off + n]))
            off += n
            (delta,) = struct.unpack_from("<d", body, off)
        except struct.error as exc:
            raise CorruptFileError(f"truncated learned filter: {exc}") from exc
        if off + 8 != len(body):
            raise CorruptFileError("learned filter length mismatch")
        return cls(model, backup, trained_on, delta, run_id)


# Per-level row of LearnedFilterSet.meta.
_DEPTH, _INIT, _LR, _TAU, _M, _K, _PLAN_OFF, _TREES, _WIDTH, _BITS_OFF, _BITS_LEN = range(11)


@numba.njit
def learned_verdicts(hi, lo, plans, bits, meta):
    """Verdicts of every packed filter for one key, two bits per filter.

    Features are extracted once and shared by all levels; one dispatch
    replaces one per level.
    """
    x = np.empty(12, np.float64)
    uh = _U(hi)
    ul = _U(lo)
    _lean_into(uh, ul, x)
    code = 0
    for j in range(meta.shape[0]):
        row = meta[j]
        off = np.int64(row[_PLAN_OFF])
        n = np.int64(row[_TREES])
        w = np.int64(row[_WIDTH])
        plan = plans[off:off + n * w].reshape((n, w))
        if accepts_flat(x, plan, np.int64(row[_DEPTH]), row[_INIT], row[_LR], row[_TAU]):
            code |= MODEL_ACCEPT << (2 * j)
        else:
            b = np.int64(row[_BITS_OFF])
            if _contains_u(bits[b:b + np.int64(row[_BITS_LEN])], np.int64(row[_M]),
                           np.int64(row[_K]), uh, ul):
                code |= BACKUP_ACCEPT << (2 * j)
    return code


class LearnedFilterSet(Mapping):
    """Read-only level -> LearnedFilter map packed for ``learned_verdicts``."""

    def __init__(self, filters: Mapping[int, LearnedFilter]):
        self._filters = dict(sorted(filters.items()))
        if len(self._filters) > 31:
            raise ValueError("at most 31 levels fit in one verdict word")
        self.slot = {level: j for j, level in enumerate(self._filters)}
        plans, bits, meta = [], [], []
        plan_off = bits_off = 0
        for f in self._filters.values():
            n, w = f._plan.shape
            meta.append([*f._meta, plan_off, n, w, bits_off, f._bits.size])
            plans.append(f._plan.ravel())
            bits.append(f._bits)
            plan_off += n * w
            bits_off += f._bits.size
        self.plans = np.concatenate(plans) if plans else np.zeros(0)
        self.bits = np.concatenate(bits) if bits else np.zeros(0, dtype=np.uint8)
        self.meta = np.array(meta, dtype=np.float64).reshape(-1, 11)

    def verdicts(self, hi: int, lo: int) -> int:
        return learned_verdicts(hi, lo, self.plans, self.bits, self.meta)

    def __getitem__(self, level: int) -> LearnedFilter:
        return self._filters[level]

    def __iter__(self) -> Iterator[int]:
        return iter(self._filters)

    def __len__(self) -> int:
        return len(self._filters)


def build_learned_filter(positives: Sequence[bytes], negatives: Sequence[bytes],
                         params: GBTParams = LEAN_PARAMS, bits_per_key: float = 10.0,
                         members: Sequence[bytes] | None = None, run_id: int = 0) -> LearnedFilter:
    """Train a LEAN12 model on ``positives`` vs ``negatives`` and back it up.

    ``members`` (default: ``positives``) are the keys the filter must never
    reject; those the model rejects go into the backup Bloom filter.
    """
    if not positives:
        raise ValueError("need at least one positive key")
    members = positives if members is None else members
    X = feature_matrix(list(positives) + list(negatives), LEAN12)
    y = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
    try:
        model = train(X, y, params, LEAN12)
    except SingleClassError:
        log.warning("single-class training data; falling back to a backup-only filter")
        model = GBTModel.constant(0.0, LEAN12, params)
    member_x = X[:len(positives)] if members is positives else feature_matrix(members, LEAN12)
    fn = false_negatives(model, member_x, np.ones(len(members)))
    missed = [members[i] for i in fn]
    if missed:
        backup = BloomFilter.create(len(missed), bits_per_key)
        backup.add_halves(*split_keys(missed))
    else:
        backup = BloomFilter.always_false()
    return LearnedFilter(model, backup, len(members), len(missed) / len(members), run_id)


def backup_only_filter(members: Sequence[bytes], bits_per_key: float = 10.0,
                       run_id: int = 0) -> LearnedFilter:
    """Degenerate filter whose model rejects everything; the backup is a full Bloom filter."""
    backup = BloomFilter.create(max(1, len(members)), bits_per_key)
    backup.add_halves(*split_keys(list(members)))
    return LearnedFilter(GBTModel.constant(0.0, LEAN12, GBTParams(n_trees=0)), backup,
                         len(members), 1.0, run_id)


def lf_query(f: LearnedFilter, key: bytes) -> bool:
    return key in f


def verify_zero_fn(f: LearnedFilter, members: Sequence[bytes]) -> list[bytes]:
    """Every member the filter would reject (empty for a correct build)."""
    ok = f.contains_many(members)
    return [k for k, hit in zip(members, ok) if not hit]


def get_learned(tree: LSMTree, filters: Mapping[int, LearnedFilter], key: bytes,
                stats: LookupStats | None = None) -> bytes | None:
    """GET that replaces each level's Bloom filter with its learned filter.

    L0 runs, and levels whose filter is missing or was built for a run that
    has since been replaced, fall back to the run's own Bloom filter.  With a
    ``LearnedFilterSet`` all level verdicts come from a single kernel call.
    """
    value = tree.memtable.get(key)
    if value is not None:
        if stats is not None:
            stats.lookups += 1
            stats.memtable_hits += 1
        return value
    hi = int.from_bytes(key[:8], "big", signed=True)
    lo = int.from_bytes(key[8:], "big", signed=True)
    levels = tree.levels
    if stats is not None:
        stats.lookups += 1
    for run in levels[0].runs:
        if stats is not None:
            stats.bloom_checks += 1
            stats.bloom_checks_l0 += 1
        if run.bloom.contains_halves(hi, lo):
            value = run.search(key, stats)
            if value is not None:
                if stats is not None:
                    stats.levels_unreached += tree.disk_level_count()
                return value
    packed = isinstance(filters, LearnedFilterSet)
    code = -1
    for pos in range(1, len(levels)):
        runs = levels[pos].runs
        if not runs:
            continue
        f = filters.get(pos)
        if f is None or len(runs) != 1 or f.run_id != runs[0].run_id:
            for run in runs:
                if stats is not None:
                    stats.bloom_checks += 1
                    stats.levels_probed += 1
                if run.bloom.contains_halves(hi, lo):
                    value = run.search(key, stats)
                    if value is not None:
                        if stats is not None:
                            stats.levels_unreached += sum(1 for lv in levels[pos + 1:] if lv.runs)
                        return value
            continue
        if packed:
            if code < 0:
                code = filters.verdicts(hi, lo)
            verdict = (code >> (2 * filters.slot[pos])) & 3
        else:
            verdict = f.query_halves(hi, lo)
        if stats is not None:
            stats.model_calls += 1
            stats.levels_probed += 1
            if verdict != MODEL_ACCEPT:
                stats.backup_queries += 1
            if verdict == BACKUP_ACCEPT:
                stats.backup_hits += 1
        if verdict != REJECT:
            value = runs[0].search(key, stats)
            if value is not None:
                if stats is not None:
                    stats.levels_unreached += sum(1 for lv in levels[pos + 1:] if lv.runs)
                return value
    return None


@dataclass(frozen=True)
class LearnedFilterReport:
    model_bytes: int
    backup_bytes: int
    traditional_bytes: int
    delta: float

    @property
    def reduction_percent(self) -> float:
        return 100.0 * (1.0 - (self.model_bytes + self.backup_bytes) / self.traditional_bytes)


def report_memory(f: LearnedFilter, baseline_bits_per_key: float = 10.0) -> LearnedFilterReport:
    """Serialized sizes of model and backup against a traditional filter over the same keys."""
    traditional = BloomFilter.create(max(1, f.trained_on), baseline_bits_per_key)
    return LearnedFilterReport(len(f.model.to_bytes()), len(f.backup.to_bytes()),
                               traditional.serialized_size(), f.delta)


def attach_stale_check(tree: LSMTree, filters: Mapping[int, LearnedFilter]) -> dict[int, bool]:
    """Per level: True when the filter no longer matches the level's run."""
    out = {}
    for level, f in filters.items():
        runs = tree.levels[level].runs if level < len(tree.levels) else []
        out[level] = len(runs) != 1 or runs[0].run_id != f.run_id
    return out

