"""Leveled LSM-tree: MemTable, sorted runs with fence pointers, compaction, GET.

Run file layout (little-endian)::

    8s   magic  b"LLSMRUN1"
    Q    format version (1)
    Q    entry_count
         entry_count x (16-byte key || 100-byte value), strictly sorted
    Q    fence_count
         fence_count x (16-byte key || Q block index)
    I    CRC32 of every preceding byte

Each run carries its own Bloom filter in a sidecar ``.bf`` file.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

from .bloom import BloomFilter, monkey_allocate, split_keys
from .codec import atomic_write, seal, unseal
from .errors import CorruptFileError, StorageError
from .keys import ENTRY_SIZE, KEY_SIZE, check_key, check_value

log = logging.getLogger(__name__)

RUN_MAGIC = b"LLSMRUN1"
RUN_VERSION = 1
_RUN_HEADER = struct.Struct("<8sQQ")
_FENCE = struct.Struct("<16sQ")
_U64 = struct.Struct("<Q")
MANIFEST = "MANIFEST.json"
MEMTABLE_LEVEL = -1


@dataclass
class TreeConfig:
    memtable_bytes: int = 1_048_576
    size_ratio: int = 10
    bits_per_key: float = 10.0
    filter_policy: str = "uniform"
    block_entries: int = 64
    monkey_levels: int = 4

    def __post_init__(self) -> None:
        if self.memtable_bytes < ENTRY_SIZE:
            raise ValueError(f"memtable must hold at least one {ENTRY_SIZE}-byte entry")
        if self.size_ratio < 2:
            raise ValueError("size_ratio must be >= 2")
        if not self.bits_per_key > 0:
            raise ValueError("bits_per_key must be positive")
        if self.filter_policy not in ("uniform", "monkey"):
            raise ValueError(f"unknown filter policy {self.filter_policy!r}")
        if self.block_entries < 1:
            raise ValueError("block_entries must be >= 1")

    @property
    def memtable_entries(self) -> int:
        return self.memtable_bytes // ENTRY_SIZE

    def level_capacity(self, level: int) -> int:
        return self.memtable_entries * self.size_ratio ** (level + 1)

    def level_bits_per_key(self, level: int) -> float:
        if self.filter_policy == "uniform" or level == 0:
            return self.bits_per_key
        caps = [self.level_capacity(i) for i in range(1, self.monkey_levels + 1)]
        alloc = monkey_allocate(caps, self.size_ratio, self.bits_per_key * sum(caps))
        idx = min(level, self.monkey_levels) - 1
        return max(alloc.per_level[idx].bits_per_key, 1.0)


class LookupStats:
    """Counters accumulated by the GET paths; pass one per call or per workload."""

    __slots__ = ("lookups", "bloom_checks", "bloom_checks_l0", "bypasses", "run_searches",
                 "block_reads", "model_calls", "backup_queries", "backup_hits",
                 "levels_probed", "levels_skipped", "levels_unreached", "memtable_hits")

    def __init__(self) -> None:
        for name in self.__slots__:
            setattr(self, name, 0)

    def merge(self, other: "LookupStats") -> None:
        for name in self.__slots__:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self.__slots__}

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.as_dict().items() if v)
        return f"LookupStats({inner})"


class MemTable:
    """Write buffer; size is counted as ``entries * 116`` bytes."""

    def __init__(self, capacity_bytes: int):
        self.capacity_bytes = capacity_bytes
        self._data: dict[bytes, bytes] = {}

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: bytes) -> bool:
        return key in self._data

    @property
    def current_bytes(self) -> int:
        return len(self._data) * ENTRY_SIZE

    def has_room(self) -> bool:
        return self.current_bytes + ENTRY_SIZE <= self.capacity_bytes

    def get(self, key: bytes) -> bytes | None:
        return self._data.get(key)

    def put(self, key: bytes, value: bytes) -> None:
        self._data[key] = value

    def items(self) -> list[tuple[bytes, bytes]]:
        return sorted(self._data.items())

    def clear(self) -> None:
        self._data.clear()


class Run:
    """Immutable sorted run. Entries live in one contiguous buffer or in a file."""

    def __init__(self, run_id: int, entry_count: int, fence_keys: list[bytes],
                 max_key: bytes, bloom: BloomFilter, block_entries: int, *,
                 blob: bytes | None = None, path: Path | None = None, data_offset: int = 0):
        self.run_id = run_id
        self.entry_count = entry_count
        self.fence_keys = fence_keys
        self.min_key = fence_keys[0]
        self.max_key = max_key
        self.bloom = bloom
        self.block_entries = block_entries
        self.path = path
        self._blob = blob
        self._data_offset = data_offset
        self._fd: int | None = None
        if blob is None:
            if path is None:
                raise ValueError("a run needs either an in-memory buffer or a file")
            self._fd = os.open(path, os.O_RDONLY)

    # -- construction ---------------------------------------------------

    @classmethod
    def build(cls, run_id: int, items: list[tuple[bytes, bytes]], *, bits_per_key: float,
              block_entries: int = 64, directory: Path | None = None) -> "Run":
        """Write a run from strictly sorted ``items`` (in memory or to ``directory``)."""
        if not items:
            raise ValueError("cannot build an empty run")
        keys = [k for k, _ in items]
        blob = b"".join(k + v for k, v in items)
        fence_keys = keys[::block_entries]
        bloom = BloomFilter.create(len(keys), bits_per_key)
        bloom.add_halves(*split_keys(keys))
        if directory is None:
            return cls(run_id, len(keys), fence_keys, keys[-1], bloom, block_entries, blob=blob)
        directory = Path(directory)
        path = directory / run_file_name(run_id)
        fences = b"".join(_FENCE.pack(k, j) for j, k in enumerate(fence_keys))
        data = seal(_RUN_HEADER.pack(RUN_MAGIC, RUN_VERSION, len(keys)) + blob
                    + _U64.pack(len(fence_keys)) + fences)
        atomic_write(directory / filter_file_name(run_id), bloom.to_bytes())
        atomic_write(path, data)
        return cls(run_id, len(keys), fence_keys, keys[-1], bloom, block_entries,
                   path=path, data_offset=_RUN_HEADER.size)

    @classmethod
    def open(cls, directory: Path, run_id: int, block_entries: int) -> "Run":
        path = Path(directory) / run_file_name(run_id)
        try:
            data = path.read_bytes()
            bloom = BloomFilter.from_bytes((Path(directory) / filter_file_name(run_id)).read_bytes())
        except OSError as exc:
            raise StorageError(f"opening run {run_id}: {exc}") from exc
        count, fence_keys, _ = parse_run_file(data)
        if count == 0:
            raise CorruptFileError(f"run {run_id} is empty")
        last = _RUN_HEADER.size + (count - 1) * ENTRY_SIZE
        return cls(run_id, count, fence_keys, bytes(data[last:last + KEY_SIZE]), bloom,
                   block_entries, path=path, data_offset=_RUN_HEADER.size)

    def close(self, _close=os.close) -> None:
        # os.close is bound at definition time so __del__ still works at shutdown
        if self._fd is not None:
            _close(self._fd)
            self._fd = None

    def __del__(self) -> None:
        self.close()

    # -- reads ----------------------------------------------------------

    def _block(self, j: int) -> tuple[bytes, int]:
        """Return (buffer, first entry index inside buffer) for block ``j``."""
        start = j * self.block_entries
        if self._blob is not None:
            return self._blob, start
        n = min(self.block_entries, self.entry_count - start)
        buf = os.pread(self._fd, n * ENTRY_SIZE, self._data_offset + start * ENTRY_SIZE)
        return buf, 0

    def search(self, key: bytes, stats: LookupStats | None = None) -> bytes | None:
        """Fence-pointer search reading at most one block."""
        if stats is not None:
            stats.run_searches += 1
        if key < self.min_key or key > self.max_key:
            return None
        j = bisect.bisect_right(self.fence_keys, key) - 1
        if stats is not None:
            stats.block_reads += 1
        buf, lo = self._block(j)
        hi = lo + min(self.block_entries, self.entry_count - j * self.block_entries)
        while lo < hi:
            mid = (lo + hi) >> 1
            off = mid * ENTRY_SIZE
            k = buf[off:off + KEY_SIZE]
            if k < key:
                lo = mid + 1
            elif k > key:
                hi = mid
            else:
                return buf[off + KEY_SIZE:off + ENTRY_SIZE]
        return None

    def _contents(self) -> bytes:
        if self._blob is not None:
            return self._blob
        return os.pread(self._fd, self.entry_count * ENTRY_SIZE, self._data_offset)

    def items(self) -> Iterator[tuple[bytes, bytes]]:
        buf = self._contents()
        for off in range(0, self.entry_count * ENTRY_SIZE, ENTRY_SIZE):
            yield buf[off:off + KEY_SIZE], buf[off + KEY_SIZE:off + ENTRY_SIZE]

    def keys(self) -> list[bytes]:
        buf = self._contents()
        return [buf[off:off + KEY_SIZE] for off in range(0, self.entry_count * ENTRY_SIZE, ENTRY_SIZE)]

    def digest_bytes(self) -> bytes:
        if self.path is not None:
            return self.path.read_bytes()
        return self._blob

    def __len__(self) -> int:
        return self.entry_count

    def __repr__(self) -> str:
        where = self.path.name if self.path else "memory"
        return f"Run(id={self.run_id}, n={self.entry_count}, {where})"


def run_file_name(run_id: int) -> str:
    return f"run_{run_id:06d}.sst"


def filter_file_name(run_id: int) -> str:
    return f"run_{run_id:06d}.bf"


def parse_run_file(data: bytes) -> tuple[int, list[bytes], memoryview]:
    """Validate a run file; return (entry_count, fence keys, entry region)."""
    body = unseal(data, RUN_MAGIC)
    if len(body) < _RUN_HEADER.size + _U64.size:
        raise CorruptFileError("truncated run header")
    _, version, count = _RUN_HEADER.unpack_from(body)
    if version != RUN_VERSION:
        raise CorruptFileError(f"unsupported run version {version}")
    end = _RUN_HEADER.size + count * ENTRY_SIZE
    if end + _U64.size > len(body):
        raise CorruptFileError("entry region overruns file")
    (n_fences,) = _U64.unpack_from(body, end)
    if end + _U64.size + n_fences * _FENCE.size != len(body):
        raise CorruptFileError("fence region length mismatch")
    fence_keys = []
    for j in range(n_fences):
        k, _ = _FENCE.unpack_from(body, end + _U64.size + j * _FENCE.size)
        fence_keys.append(k)
    return count, fence_keys, body[_RUN_HEADER.size:end]


@dataclass
class Level:
    index: int
    capacity_entries: int
    runs: list[Run] = field(default_factory=list)  # newest first

    @property
    def entry_count(self) -> int:
        return sum(r.entry_count for r in self.runs)

    def __bool__(self) -> bool:
        return bool(self.runs)


class LSMTree:
    """Leveled LSM-tree with per-run Bloom filters.

    ``directory=None`` keeps runs in memory; otherwise runs, filters and a
    JSON manifest are written there.  L0 holds up to ``size_ratio`` unmerged
    runs; every deeper level holds a single run after compaction.
    """

    def __init__(self, config: TreeConfig | None = None, directory: str | os.PathLike | None = None):
        self.config = config or TreeConfig()
        self.directory = Path(directory) if directory is not None else None
        self.memtable = MemTable(self.config.memtable_bytes)
        self.levels: list[Level] = [Level(0, self.config.level_capacity(0))]
        self._next_run_id = 1
        self.flush_count = 0
        self.compaction_count = 0
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            if (self.directory / MANIFEST).exists():
                raise StorageError(f"{self.directory} already holds a tree; use LSMTree.open")
            self._save_manifest()

    # -- writes ---------------------------------------------------------

    def put(self, key: bytes, value: bytes) -> None:
        check_key(key)
        check_value(value)
        self.memtable.put(key, value)
        if not self.memtable.has_room():
            self.flush()

    def flush(self) -> Run | None:
        """Write the MemTable as a new L0 run; cascades compaction."""
        if not len(self.memtable):
            return None
        run = self._build_run(self.memtable.items(), level=0)
        self.levels[0].runs.insert(0, run)
        self.memtable.clear()
        self.flush_count += 1
        self._cascade(0)
        self._save_manifest()
        return run

    def _cascade(self, level: int) -> None:
        while level < len(self.levels):
            lvl = self.levels[level]
            over = lvl.entry_count > lvl.capacity_entries
            if level == 0:
                over = over or len(lvl.runs) >= self.config.size_ratio
            if not over:
                break
            self.compact(level)
            level += 1

    def compact(self, level: int) -> Run:
        """Merge every run of ``level`` with ``level + 1`` into one run at ``level + 1``."""
        if level + 1 >= len(self.levels):
            self.levels.append(Level(level + 1, self.config.level_capacity(level + 1)))
        src, dst = self.levels[level], self.levels[level + 1]
        sources = src.runs + dst.runs  # shallow (newest) first
        merged = merge_runs(sources)
        run = self._build_run(merged, level=level + 1)
        old = sources
        src.runs = []
        dst.runs = [run]
        self.compaction_count += 1
        self._save_manifest()
        for r in old:
            self._drop_run(r)
        log.debug("compacted L%d into L%d: %d entries", level, level + 1, run.entry_count)
        return run

    def _build_run(self, items: list[tuple[bytes, bytes]], level: int) -> Run:
        run = Run.build(self._next_run_id, items,
                        bits_per_key=self.config.level_bits_per_key(level),
                        block_entries=self.config.block_entries, directory=self.directory)
        self._next_run_id += 1
        return run

    def _drop_run(self, run: Run) -> None:
        run.close()
        if self.directory is not None:
            for name in (run_file_name(run.run_id), filter_file_name(run.run_id)):
                try:
                    (self.directory / name).unlink()
                except FileNotFoundError:
                    pass

    # -- reads ----------------------------------------------------------

    def get(self, key: bytes, stats: LookupStats | None = None) -> bytes | None:
        """Standard GET: MemTable, then each run's Bloom filter, newest to oldest."""
        value = self.memtable.get(key)
        if value is not None:
            if stats is not None:
                stats.lookups += 1
                stats.memtable_hits += 1
            return value
        hi = int.from_bytes(key[:8], "big", signed=True)
        lo = int.from_bytes(key[8:], "big", signed=True)
        if stats is None:
            for level in self.levels:
                for run in level.runs:
                    if run.bloom.contains_halves(hi, lo):
                        value = run.search(key)
                        if value is not None:
                            return value
            return None
        stats.lookups += 1
        for run in self.levels[0].runs:
            stats.bloom_checks += 1
            stats.bloom_checks_l0 += 1
            if run.bloom.contains_halves(hi, lo):
                value = run.search(key, stats)
                if value is not None:
                    stats.levels_unreached += self.disk_level_count()
                    return value
        deep = self.levels[1:]
        for pos, level in enumerate(deep):
            for run in level.runs:
                stats.bloom_checks += 1
                stats.levels_probed += 1
                if run.bloom.contains_halves(hi, lo):
                    value = run.search(key, stats)
                    if value is not None:
                        stats.levels_unreached += sum(1 for lv in deep[pos + 1:] if lv.runs)
                        return value
        return None

    def disk_level_count(self) -> int:
        """Non-empty levels >= 1."""
        return sum(1 for lv in self.levels[1:] if lv.runs)

    def items(self) -> dict[bytes, bytes]:
        """Resolved contents (newest wins)."""
        out: dict[bytes, bytes] = {}
        for level in reversed(self.levels):
            for run in reversed(level.runs):
                out.update(run.items())
        out.update(self.memtable.items())
        return out

    def residency(self) -> dict[bytes, int]:
        """Map every live key to the level holding its newest version (-1 = MemTable)."""
        out: dict[bytes, int] = {}
        for level in reversed(self.levels):
            for run in reversed(level.runs):
                out.update(dict.fromkeys(run.keys(), level.index))
        out.update(dict.fromkeys(self.memtable._data, MEMTABLE_LEVEL))
        return out

    def level_keys(self, level: int) -> list[bytes]:
        if level >= len(self.levels):
            return []
        keys: list[bytes] = []
        for run in self.levels[level].runs:
            keys.extend(run.keys())
        return keys

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for level in self.levels:
            for run in level.runs:
                h.update(run.digest_bytes())
        return h.hexdigest()

    def __len__(self) -> int:
        return len(self.items())

    # -- persistence ----------------------------------------------------

    def _save_manifest(self) -> None:
        if self.directory is None:
            return
        doc = {
            "format": 1,
            "config": asdict(self.config),
            "next_run_id": self._next_run_id,
            "flush_count": self.flush_count,
            "compaction_count": self.compaction_count,
            "levels": [[r.run_id for r in lv.runs] for lv in self.levels],
        }
        atomic_write(self.directory / MANIFEST, json.dumps(doc, indent=1).encode())

    @classmethod
    def open(cls, directory: str | os.PathLike) -> "LSMTree":
        directory = Path(directory)
        try:
            doc = json.loads((directory / MANIFEST).read_text())
        except OSError as exc:
            raise StorageError(f"no tree manifest in {directory}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CorruptFileError(f"bad manifest in {directory}: {exc}") from exc
        tree = cls.__new__(cls)
        tree.config = TreeConfig(**doc["config"])
        tree.directory = directory
        tree.memtable = MemTable(tree.config.memtable_bytes)
        tree._next_run_id = doc["next_run_id"]
        tree.flush_count = doc.get("flush_count", 0)
        tree.compaction_count = doc.get("compaction_count", 0)
        tree.levels = []
        for i, run_ids in enumerate(doc["levels"]):
            runs = [Run.open(directory, rid, tree.config.block_entries) for rid in run_ids]
            tree.levels.append(Level(i, tree.config.level_capacity(i), runs))
        return tree

    def close(self) -> None:
        for level in self.levels:
            for run in level.runs:
                run.close()

    def __enter__(self) -> "LSMTree":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def merge_runs(sources: list[Run]) -> list[tuple[bytes, bytes]]:
    """k-way merge; ``sources[0]`` is the shallowest and wins on duplicate keys."""
    def tagged(rank: int, run: Run):
        for k, v in run.items():
            yield k, rank, v

    streams = [tagged(rank, run) for rank, run in enumerate(sources)]
    out: list[tuple[bytes, bytes]] = []
    last = None
    for k, _, v in heapq.merge(*streams):
        if k != last:
            out.append((k, v))
            last = k
    return out


def get_traditional(tree: LSMTree, key: bytes, stats: LookupStats | None = None) -> bytes | None:
    return tree.get(key, stats)


def search_run(run: Run, key: bytes, stats: LookupStats | None = None) -> bytes | None:
    return run.search(key, stats)
