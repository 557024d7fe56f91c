"""Classifier-guided GET: per-level models decide whether a level's Bloom filter is probed.

A level whose model answers 0 is skipped outright, which saves the filter
probe (and any false-positive search) but may lose a key that really lives
there.  L0 runs are always probed through their own filters, and a level
without a model is never skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .features import RICH45, extract_rich
from .gbt import GBTModel, accepts_one
from .lsm import LookupStats, LSMTree


@dataclass
class LevelCounters:
    predictions: int = 0
    skips: int = 0
    confirmed_skips: int = 0
    false_skips: int = 0


@dataclass
class LevelClassifierSet:
    """One RICH45 model per disk level (levels >= 1)."""

    models: dict[int, GBTModel] = field(default_factory=dict)
    counters: dict[int, LevelCounters] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for level, model in self.models.items():
            if model.schema_id != RICH45:
                raise ValueError(f"level {level} model uses {model.schema_id}, expected {RICH45}")

    def counter(self, level: int) -> LevelCounters:
        c = self.counters.get(level)
        if c is None:
            c = self.counters[level] = LevelCounters()
        return c

    @classmethod
    def constant(cls, levels: Iterable[int], decision: int) -> "LevelClassifierSet":
        """Stub models that always answer ``decision`` (for equivalence checks)."""
        model = GBTModel.constant(0.999 if decision else 0.001, RICH45)
        return cls({lv: model for lv in levels})


def get_classifier(tree: LSMTree, models: LevelClassifierSet, key: bytes,
                   stats: LookupStats | None = None, truth_level: int | None = None) -> bytes | None:
    """GET that consults ``models`` before each level's Bloom filter.

    ``truth_level`` (the level really holding ``key``, if known) only feeds the
    per-level confirmed/false skip counters.
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
    x = None
    table = models.models
    for pos in range(1, len(levels)):
        level = levels[pos]
        if not level.runs:
            continue
        model = table.get(pos)
        if model is None:
            keep = True
        else:
            if x is None:
                x = extract_rich(key)
            keep = accepts_one(x, model.plan, model.depth, model.initial_score,
                               model.params.learning_rate, model.params.threshold)
            if stats is not None:
                stats.model_calls += 1
                c = models.counter(pos)
                c.predictions += 1
                if not keep:
                    c.skips += 1
                    if truth_level is not None:
                        if truth_level == pos:
                            c.false_skips += 1
                        else:
                            c.confirmed_skips += 1
        if not keep:
            if stats is not None:
                stats.bypasses += 1
                stats.levels_skipped += 1
            continue
        for run in level.runs:
            if stats is not None:
                stats.bloom_checks += 1
                stats.levels_probed += 1
            if run.bloom.contains_halves(hi, lo):
                value = run.search(key, stats)
                if value is not None:
                    if stats is not None:
                        stats.levels_unreached += sum(1 for lv in levels[pos + 1:] if lv.runs)
                    return value
    return None


@dataclass(frozen=True)
class BypassSummary:
    checks: int
    bypasses: int
    rate_of_total: float
    rate_of_checks: float


def measure_bypass(stats: LookupStats) -> BypassSummary:
    """Bypass rates in percent, against all opportunities and against probes made."""
    checks, bypasses = stats.bloom_checks, stats.bypasses
    total = checks + bypasses
    return BypassSummary(checks, bypasses,
                         100.0 * bypasses / total if total else 0.0,
                         100.0 * bypasses / checks if checks else 0.0)


@dataclass(frozen=True)
class FNRReport:
    overall: float
    per_level: dict[int, float]
    counts: dict[int, int]
    misses: int
    probes: int


def measure_fnr(tree: LSMTree, models: LevelClassifierSet,
                probe_set: Iterable[tuple[bytes, int]],
                current_levels: Mapping[bytes, int] | None = None) -> FNRReport:
    """Fraction of present keys the classifier path fails to return.

    Keys whose level moved since the probe set was recorded (per
    ``current_levels``) count toward the overall rate only.
    """
    misses = probes = 0
    hit_by_level: dict[int, int] = {}
    miss_by_level: dict[int, int] = {}
    for key, level in probe_set:
        probes += 1
        found = get_classifier(tree, models, key) is not None
        if not found:
            misses += 1
        if current_levels is not None and current_levels.get(key) != level:
            continue
        hit_by_level[level] = hit_by_level.get(level, 0) + 1
        if not found:
            miss_by_level[level] = miss_by_level.get(level, 0) + 1
    per_level = {lv: miss_by_level.get(lv, 0) / n for lv, n in sorted(hit_by_level.items())}
    return FNRReport(misses / probes if probes else 0.0, per_level, dict(sorted(hit_by_level.items())),
                     misses, probes)
