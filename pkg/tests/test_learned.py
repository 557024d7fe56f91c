import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_config
from learned_lsm.bloom import BloomFilter
from learned_lsm.errors import CorruptFileError
from learned_lsm.features import LEAN12, feature_matrix
from learned_lsm.gbt import GBTModel, GBTParams
from learned_lsm.keys import int_to_key
from learned_lsm.learned import (BACKUP_ACCEPT, MODEL_ACCEPT, REJECT, LearnedFilter,
                                 attach_stale_check, backup_only_filter, build_learned_filter,
                                 LearnedFilterSet, get_learned, learned_verdicts, lf_query, report_memory, verify_zero_fn)
from learned_lsm.lsm import LookupStats, LSMTree
from learned_lsm.workload import AbsentKeySource, SplitMix64


def random_keys(seed, n):
    rng = SplitMix64(seed)
    return [rng.key() for _ in range(n)]


def level_filters(tree, n_neg=None):
    res = tree.residency()
    out = {}
    for lv in tree.levels[1:]:
        if len(lv.runs) != 1:
            continue
        pos = tree.level_keys(lv.index)
        neg = [k for k, l in res.items() if l != lv.index][:len(pos)]
        neg += AbsentKeySource(lv.index, res).take(n_neg or len(pos))
        out[lv.index] = build_learned_filter(pos, neg, run_id=lv.runs[0].run_id)
    return out


@pytest.fixture(scope="module")
def filters_8k(tree_8k):
    return level_filters(tree_8k)


class TestBuild:
    def test_zero_false_negatives(self, tree_8k, filters_8k):
        assert filters_8k
        for level, f in filters_8k.items():
            members = tree_8k.level_keys(level)
            assert verify_zero_fn(f, members) == []
            assert all(lf_query(f, k) for k in members[::7])

    def test_separable_toy_has_empty_backup(self):
        even = [int_to_key(2 * i * 1_000_003) for i in range(400)]
        odd = [int_to_key((2 * i + 1) * 1_000_003) for i in range(400)]
        f = build_learned_filter(even, odd)
        assert f.delta == 0.0
        assert f.backup == BloomFilter.always_false()
        assert f.backup.m == 1 and f.backup.k == 1
        assert not any(f.contains_many(odd))
        assert all(f.contains_many(even))

    def test_single_class_falls_back(self, caplog):
        keys = random_keys(1, 300)
        f = build_learned_filter(keys, [])
        assert f.delta == 1.0 and verify_zero_fn(f, keys) == []
        assert "backup-only" in caplog.text

    def test_zero_tree_model_degenerates_to_bloom(self):
        # more negatives than positives puts the base rate, and so every score, below 0.5
        keys = random_keys(2, 500)
        f = build_learned_filter(keys, random_keys(3, 1000), params=GBTParams(n_trees=0))
        assert f.delta == 1.0
        assert f.backup == BloomFilter.from_keys(keys, 10)

    def test_backup_only_matches_traditional(self):
        keys = random_keys(4, 1000)
        f = backup_only_filter(keys)
        bf = BloomFilter.from_keys(keys, 10)
        probes = random_keys(5, 5000) + keys
        assert list(f.contains_many(probes)) == list(bf.contains_many(probes))
        assert report_memory(f).reduction_percent <= 0

    def test_members_differ_from_positives(self):
        pos = random_keys(6, 300)
        extra = random_keys(7, 50)
        f = build_learned_filter(pos, random_keys(8, 300), members=pos + extra)
        assert verify_zero_fn(f, pos + extra) == [] and f.trained_on == 350

    def test_needs_positives(self):
        with pytest.raises(ValueError):
            build_learned_filter([], random_keys(1, 5))

    @settings(max_examples=15)
    @given(st.integers(0, 2 ** 32), st.integers(20, 300), st.integers(0, 300))
    def test_zero_fn_property(self, seed, n_pos, n_neg):
        pos = random_keys(seed, n_pos)
        neg = random_keys(seed + 1, n_neg)
        f = build_learned_filter(pos, neg, params=GBTParams(5, 2, 0.3))
        assert verify_zero_fn(f, pos) == []
        assert all(k in f for k in pos)


class TestPredicate:
    def test_truth_table(self):
        keys = random_keys(9, 200)
        model_yes = GBTModel.constant(0.9, LEAN12)
        model_no = GBTModel.constant(0.1, LEAN12)
        backup = BloomFilter.from_keys(keys[:100], 10)
        inside, outside = keys[0], next(k for k in random_keys(10, 100)
                                        if k not in backup)
        cases = [(model_yes, inside, MODEL_ACCEPT), (model_yes, outside, MODEL_ACCEPT),
                 (model_no, inside, BACKUP_ACCEPT), (model_no, outside, REJECT)]
        for model, key, want in cases:
            f = LearnedFilter(model, backup, 100, 0.0)
            hi = int.from_bytes(key[:8], "big", signed=True)
            lo = int.from_bytes(key[8:], "big", signed=True)
            assert f.query_halves(hi, lo) == want
            assert (key in f) == (want != REJECT)

    def test_scalar_and_batch_agree(self, filters_8k):
        probes = random_keys(11, 2000)
        for f in filters_8k.values():
            assert list(f.contains_many(probes)) == [k in f for k in probes]

    def test_matches_model_or_backup(self, filters_8k):
        probes = random_keys(12, 1000)
        for f in filters_8k.values():
            model = f.model.decide(feature_matrix(probes, LEAN12)).astype(bool)
            assert np.array_equal(f.contains_many(probes), model | f.backup.contains_many(probes))

    def test_fpr_decomposes(self, tree_8k, filters_8k):
        probes = AbsentKeySource(13, tree_8k.residency()).take(20_000)
        X = feature_matrix(probes, LEAN12)
        for f in filters_8k.values():
            model = f.model.decide(X).astype(bool)
            backup_only = f.backup.contains_many(probes) & ~model
            assert f.contains_many(probes).mean() == pytest.approx(model.mean() + backup_only.mean())

    @pytest.mark.slow
    def test_fpr_within_five_times_traditional_at_desk_scale(self, desk_dir, desk_learned):
        from learned_lsm.bench import load_learned, open_tree
        tree = open_tree(desk_dir)
        filters = load_learned(desk_dir)
        probes = AbsentKeySource(13, tree.residency()).take(100_000)
        for level, f in filters.items():
            fpr = f.contains_many(probes).mean()
            trad = tree.levels[level].runs[0].bloom.contains_many(probes).mean()
            assert fpr <= 5 * trad, (level, fpr, trad)
        tree.close()


class TestGet:
    def test_finds_every_key(self, tree_8k, filters_8k, corpus_8k):
        for k, v in corpus_8k:
            assert get_learned(tree_8k, filters_8k, k) == v

    def test_absent_searches_are_false_positives(self, tree_8k, filters_8k):
        for k in AbsentKeySource(14, tree_8k.residency()).take(500):
            s = LookupStats()
            assert get_learned(tree_8k, filters_8k, k, s) is None
            fp_l0 = sum(k in r.bloom for r in tree_8k.levels[0].runs)
            fp_lf = sum(k in f for f in filters_8k.values())
            assert s.run_searches == fp_l0 + fp_lf
            assert s.model_calls == len(filters_8k)

    def test_backup_counters(self, tree_8k, filters_8k):
        total = LookupStats()
        for k in tree_8k.level_keys(2)[::3]:
            get_learned(tree_8k, filters_8k, k, total)
        assert total.backup_hits <= total.backup_queries <= total.model_calls

    def test_missing_filter_falls_back(self, tree_8k, filters_8k, corpus_8k):
        partial = {lv: f for lv, f in filters_8k.items() if lv != 1}
        for k, v in list(corpus_8k)[::5]:
            assert get_learned(tree_8k, partial, k, LookupStats()) == v
        assert get_learned(tree_8k, {}, int_to_key(3)) == tree_8k.get(int_to_key(3))

    def test_packed_set_matches_per_level(self, tree_8k, filters_8k, corpus_8k):
        packed = LearnedFilterSet(filters_8k)
        assert dict(packed) == filters_8k
        probes = list(corpus_8k.keys)[::7] + AbsentKeySource(16, tree_8k.residency()).take(1000)
        for k in probes:
            a, b = LookupStats(), LookupStats()
            assert get_learned(tree_8k, packed, k, a) == get_learned(tree_8k, filters_8k, k, b)
            assert [getattr(a, n) for n in a.__slots__] == [getattr(b, n) for n in b.__slots__]
            hi = int.from_bytes(k[:8], "big", signed=True)
            lo = int.from_bytes(k[8:], "big", signed=True)
            code = packed.verdicts(hi, lo)
            for lv, f in filters_8k.items():
                assert (code >> (2 * packed.slot[lv])) & 3 == f.query_halves(hi, lo)

    def test_packed_empty_and_kernel(self):
        empty = LearnedFilterSet({})
        assert len(empty) == 0 and learned_verdicts(1, 2, empty.plans, empty.bits, empty.meta) == 0

    def test_memtable_first(self, filters_8k):
        t = LSMTree(small_config())
        t.put(int_to_key(1), bytes(100))
        s = LookupStats()
        assert get_learned(t, filters_8k, int_to_key(1), s) == bytes(100)
        assert s.model_calls == 0

    def test_stale_filter_ignored_after_compaction(self, corpus_8k):
        t = LSMTree(small_config())
        items = list(corpus_8k)
        for k, v in items[:4000]:
            t.put(k, v)
        filters = level_filters(t)
        assert not any(attach_stale_check(t, filters).values())
        for k, v in items[4000:]:
            t.put(k, v)
        stale = attach_stale_check(t, filters)
        assert any(stale.values())
        for k, v in items[::9]:
            assert get_learned(t, filters, k) == v


class TestSidecar:
    def test_round_trip(self, filters_8k):
        for f in filters_8k.values():
            back = LearnedFilter.from_bytes(f.to_bytes())
            assert back.to_bytes() == f.to_bytes()
            assert (back.run_id, back.trained_on, back.delta) == (f.run_id, f.trained_on, f.delta)
            probes = random_keys(15, 500)
            assert list(back.contains_many(probes)) == list(f.contains_many(probes))

    def test_layout(self, filters_8k):
        f = next(iter(filters_8k.values()))
        data = f.to_bytes()
        assert data[:8] == b"LLSMLBF1"
        assert int.from_bytes(data[8:16], "little") == f.run_id
        assert int.from_bytes(data[16:24], "little") == f.trained_on
        n = int.from_bytes(data[24:32], "little")
        assert data[32:40] == b"LLSMGBT1" and n == len(f.model.to_bytes())

    @pytest.mark.parametrize("mutate", [lambda b: b[:-3], lambda b: b[:20] + bytes([b[20] ^ 1]) + b[21:]])
    def test_corruption(self, filters_8k, mutate):
        f = next(iter(filters_8k.values()))
        with pytest.raises(CorruptFileError):
            LearnedFilter.from_bytes(mutate(f.to_bytes()))


class TestMemory:
    def test_identity(self, filters_8k):
        for f in filters_8k.values():
            r = report_memory(f)
            assert r.model_bytes == len(f.model.to_bytes())
            assert r.backup_bytes == len(f.backup.to_bytes())
            assert r.traditional_bytes == BloomFilter.create(f.trained_on, 10).serialized_size()
            assert r.reduction_percent == pytest.approx(
                100 * (1 - (r.model_bytes + r.backup_bytes) / r.traditional_bytes))

    def test_one_percent_backup(self):
        # a model missing 1% of 10^5 keys needs a backup sized for 10^3 keys
        backup = BloomFilter.create(1000, 10)
        full = BloomFilter.create(100_000, 10)
        assert backup.m / full.m == pytest.approx(0.01)
