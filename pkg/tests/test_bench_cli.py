import csv
import json

import pytest

from conftest import SMALL_MEMTABLE, small_config
from learned_lsm import cli
from learned_lsm.bench import (CSV_COLUMNS, LABELS, RUN_MANIFEST, CorrectnessGateError,
                               DataError, TrainConfig, cmd_bench, cmd_load,
                               cmd_train, load_learned, open_tree, read_labels, read_manifest)
from learned_lsm.bloom import BloomFilter
from learned_lsm.classifier import LevelClassifierSet
from learned_lsm.gbt import GBTModel, GBTParams
from learned_lsm.features import LEAN12
from learned_lsm.learned import LearnedFilter, report_memory
from learned_lsm.lsm import TreeConfig
from learned_lsm.workload import generate_corpus

SPEC_HEADER = ("workload, variant, n_ops, avg_us, p50_us, p99_us, bloom_checks, bloom_bypasses, "
               "bypass_rate_of_total, bypass_rate_of_checks, fnr_overall, fnr_l0..fnr_l3, accuracy")
FAST = TrainConfig(classifier_params=GBTParams(20, 3, 0.1))
WORKLOADS = ["random", "sequential", "level0", "level1", "level2"]
N_OPS = 300


def expand(header: str) -> list[str]:
    out = []
    for name in header.split(", "):
        if name == "fnr_l0..fnr_l3":
            out += [f"fnr_l{i}" for i in range(4)]
        else:
            out.append(name)
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    d = root / "d"
    assert cli.main(["load", "--seed", "5", "--pairs", "20000", "--dir", str(d),
                     "--memtable-bytes", str(SMALL_MEMTABLE)]) == 0
    assert cli.main(["train", "--dir", str(d), "--mode", "learned"]) == 0
    cmd_train(d, "classifier", FAST)
    out = root / "res" / "results.csv"
    assert cli.main(["bench", "--dir", str(d), "--variants", "t,c,l", "--workloads",
                     "random,sequential,l0,l1,l2", "--ops", str(N_OPS), "--out", str(out)]) == 0
    figs = root / "figs"
    assert cli.main(["report", "--in", str(out), "--out", str(figs)]) == 0
    return d, out, figs


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestLoad:
    def test_labels_and_manifest(self, pipeline):
        d, _, _ = pipeline
        labels = read_labels(d / LABELS)
        m = read_manifest(d)
        assert len(labels) == m["label_count"] == 20_000
        assert m["raw_bytes"] == 20_000 * 116
        assert set(labels) == set(generate_corpus(5, 20_000).keys)
        assert sum(m["levels"]) == 20_000

    def test_reopen_fingerprint(self, pipeline):
        d, _, _ = pipeline
        tree = open_tree(d)
        assert tree.fingerprint() == read_manifest(d)["tree_fingerprint"]
        labels = read_labels(d / LABELS)
        assert tree.residency() == labels
        tree.close()

    def test_refuses_existing_dir(self, pipeline, capsys):
        d, _, _ = pipeline
        assert cli.main(["load", "--seed", "1", "--pairs", "10", "--dir", str(d)]) == 2
        assert "already" in capsys.readouterr().err

    def test_tampered_tree_rejected(self, tmp_path):
        d = tmp_path / "t"
        cmd_load(d, 1, 500, small_config())
        m = read_manifest(d)
        m["tree_fingerprint"] = "0" * 64
        (d / RUN_MANIFEST).write_text(json.dumps(m))
        with pytest.raises(DataError):
            open_tree(d)

    @pytest.mark.slow
    def test_default_memtable_fills_l0_and_l1(self, tmp_path):
        # 10^5 pairs over 9 039-entry MemTables: 11 flushes; the 10th merges L0 into L1
        n, per, T = 100_000, 1_048_576 // 116, 10
        flushes, rest = divmod(n, per)
        l1 = (flushes // T) * T * per
        l0 = n - l1
        res = cmd_load(tmp_path / "d", 3, n, TreeConfig())
        sizes = [lv.entry_count for lv in res.tree.levels]
        assert sizes == [l0, l1] == [9610, 90390]
        res.tree.close()


class TestTrain:
    def test_one_file_per_disk_level(self, pipeline):
        d, _, _ = pipeline
        tree = open_tree(d)
        disk = [lv.index for lv in tree.levels[1:] if lv.runs]
        assert sorted(p.name for p in (d / "models").glob("*.gbt")) == \
            [f"classifier_L{i}.gbt" for i in disk]
        assert sorted(p.name for p in (d / "models").glob("*.lbf")) == \
            [f"learned_L{i}.lbf" for i in disk]
        tree.close()

    def test_retrain_is_deterministic(self, pipeline):
        d, _, _ = pipeline
        before = dict(read_manifest(d)["model_digests"])
        cmd_train(d, "learned")
        cmd_train(d, "classifier", FAST)
        assert read_manifest(d)["model_digests"] == before

    def test_learned_filters_cover_their_level(self, pipeline):
        d, _, _ = pipeline
        labels = read_labels(d / LABELS)
        for level, f in load_learned(d).items():
            members = [k for k, lv in labels.items() if lv == level]
            assert f.contains_many(members).all()

    def test_neg_ratio_parsing(self):
        assert cli.parse_neg_ratio("1:1:1") == (1.0, 1.0)
        assert cli.parse_neg_ratio("2:1:3") == (0.5, 1.5)
        assert cli.parse_neg_ratio("0.5:2") == (0.5, 2.0)
        assert cli.parse_neg_ratio("3") == (3.0, 3.0)
        for bad in ("0:1:1", "1:-1", "a"):
            with pytest.raises(ValueError):
                cli.parse_neg_ratio(bad)

    def test_train_without_load(self, tmp_path):
        assert cli.main(["train", "--dir", str(tmp_path), "--mode", "learned"]) == 2


class TestBench:
    def test_header_exact(self, pipeline):
        _, out, _ = pipeline
        with open(out) as fh:
            header = fh.readline().strip().split(",")
        spec = expand(SPEC_HEADER)
        assert header[:len(spec)] == spec
        assert header == CSV_COLUMNS

    def test_rows(self, pipeline):
        d, out, _ = pipeline
        rows = read_csv(out)
        assert [(r["workload"], r["variant"]) for r in rows] == \
            [(w, v) for w in WORKLOADS for v in ("traditional", "classifier", "learned")]
        digest = rows[0]["manifest_digest"]
        for r in rows:
            assert int(r["n_ops"]) == N_OPS and float(r["avg_us"]) >= 0
            assert 0 <= float(r["bypass_rate_of_total"]) <= 100
            assert 0 <= float(r["fnr_overall"]) <= 1
            assert int(r["wrong_values"]) == 0
            assert r["manifest_digest"] == digest
            if r["variant"] != "classifier":
                assert float(r["fnr_overall"]) == 0 and int(r["bloom_bypasses"]) == 0
        c = next(r for r in rows if r["workload"] == "random" and r["variant"] == "classifier")
        assert int(c["bloom_bypasses"]) > 0 and float(c["bypass_rate_of_checks"]) > 0

    def test_sidecars(self, pipeline):
        _, out, _ = pipeline
        trace = read_csv(out.with_name("results.trace.csv"))
        assert len(trace) == N_OPS * 3 * len(WORKLOADS)
        assert "random" in out.with_name("results.summary.txt").read_text()
        filt = read_csv(out.with_name("results.filters.csv"))
        assert {r["filter"] for r in filt} == {"traditional", "learned"}

    def test_pipeline_determinism(self, pipeline):
        d, _, _ = pipeline
        timing = {"avg_us", "p50_us", "p99_us", "speedup"}
        first = cmd_bench(d, ["t", "c", "l"], WORKLOADS, N_OPS).rows
        again = cmd_bench(d, ["t", "c", "l"], WORKLOADS, N_OPS).rows
        assert len(first) == len(again) == 3 * len(WORKLOADS)
        for a, b in zip(first, again):
            for col in CSV_COLUMNS:
                if col not in timing:
                    assert a[col] == b[col], col

    def test_accept_all_stub_matches_traditional_probes(self, pipeline):
        d, _, _ = pipeline
        tree = open_tree(d)
        levels = [lv.index for lv in tree.levels[1:] if lv.runs]
        tree.close()
        res = cmd_bench(d, ["t", "c"], ["random", "level2"], N_OPS,
                        classifiers=LevelClassifierSet.constant(levels, 1))
        for kind in ("random", "level2"):
            t, c = res.runs[(kind, "traditional")], res.runs[(kind, "classifier")]
            assert c.stats.bloom_checks == t.stats.bloom_checks
            assert c.stats.run_searches == t.stats.run_searches
            assert c.false_negatives == 0

    def test_gate_on_lossy_learned_filter(self, pipeline):
        d, _, _ = pipeline
        tree = open_tree(d)
        run = tree.levels[1].runs[0]
        tree.close()
        lossy = LearnedFilter(GBTModel.constant(0.01, LEAN12), BloomFilter.always_false(),
                              run.entry_count, 1.0, run.run_id)
        with pytest.raises(CorrectnessGateError):
            cmd_bench(d, ["t", "l"], ["level1"], 100, learned={1: lossy})

    def test_gate_exit_code(self, pipeline, monkeypatch, tmp_path):
        d, _, _ = pipeline

        def boom(*a, **kw):
            raise CorrectnessGateError("wrong value")

        monkeypatch.setattr(cli, "cmd_bench", boom)
        assert cli.main(["bench", "--dir", str(d), "--out", str(tmp_path / "x.csv")]) == 3

    def test_missing_models(self, tmp_path):
        d = tmp_path / "d"
        cmd_load(d, 1, 2000, small_config())
        assert cli.main(["bench", "--dir", str(d), "--variants", "c", "--ops", "10",
                         "--out", str(tmp_path / "r.csv")]) == 2

    def test_corrupt_model(self, tmp_path):
        d = tmp_path / "d"
        cmd_load(d, 1, 2000, small_config())
        cmd_train(d, "learned")
        path = next((d / "models").glob("*.lbf"))
        path.write_bytes(path.read_bytes()[:-5])
        assert cli.main(["bench", "--dir", str(d), "--variants", "t,l", "--ops", "10",
                         "--out", str(tmp_path / "r.csv")]) == 2

    @pytest.mark.parametrize("argv", [[], ["bench"], ["load", "--seed", "x", "--pairs", "1",
                                                      "--dir", "d"],
                                      ["train", "--dir", "d", "--mode", "neural"]])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 1

    def test_unknown_variant(self, pipeline, tmp_path):
        d, _, _ = pipeline
        assert cli.main(["bench", "--dir", str(d), "--variants", "x", "--ops", "5",
                         "--out", str(tmp_path / "r.csv")]) == 1


class TestReport:
    def test_files(self, pipeline):
        _, _, figs = pipeline
        names = {p.name for p in figs.iterdir()}
        assert names == {"latency.csv", "speedup.csv", "bypass.csv", "filter_memory.csv",
                         "per_lookup_trace.csv", "filter_query_time.csv"}

    def test_speedup_rows(self, pipeline):
        _, _, figs = pipeline
        assert len(read_csv(figs / "speedup.csv")) == len(WORKLOADS) * 2

    def test_trace_length(self, pipeline):
        _, _, figs = pipeline
        trace = read_csv(figs / "per_lookup_trace.csv")
        for w in WORKLOADS:
            for v in ("traditional", "classifier", "learned"):
                ops = [int(r["op_index"]) for r in trace if r["workload"] == w and r["variant"] == v]
                assert ops == list(range(N_OPS))

    def test_memory_matches_report_memory(self, pipeline):
        d, _, figs = pipeline
        mem = {int(r["level"]): r for r in read_csv(figs / "filter_memory.csv")}
        tree = open_tree(d)
        for level, f in load_learned(d).items():
            rep = report_memory(f)
            row = mem[level]
            assert int(row["model_bytes"]) == rep.model_bytes
            assert int(row["backup_bytes"]) == rep.backup_bytes
            assert int(row["traditional_bytes"]) == tree.levels[level].runs[0].bloom.serialized_size()
            assert int(row["traditional_bytes"]) == rep.traditional_bytes
        tree.close()

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert cli.main(["report", "--in", str(bad), "--out", str(tmp_path / "f")]) == 2
        assert cli.main(["report", "--in", str(tmp_path / "none.csv"),
                         "--out", str(tmp_path / "f")]) == 2
