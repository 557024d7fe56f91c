"""End-to-end pipeline: load a tree, train per-level models, benchmark, report.

Data directory layout::

    D/tree/               run files, Bloom sidecars, MANIFEST.json
    D/labels.tsv          hex key <TAB> resident level, one line per key
    D/models/             classifier_L{i}.gbt and learned_L{i}.lbf
    D/run_manifest.json   config, corpus seed, tree fingerprint, model digests
"""

from __future__ import annotations

import csv
import gc
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .bloom import BloomFilter
from .classifier import LevelClassifierSet, get_classifier, measure_bypass
from .codec import atomic_write
from .errors import LSMError, StorageError
from .features import RICH45, feature_matrix
from .gbt import CLASSIFIER_PARAMS, LEAN_PARAMS, GBTModel, GBTParams, train
from .learned import (LearnedFilter, LearnedFilterSet, build_learned_filter, get_learned,
                      report_memory, verify_zero_fn)
from .lsm import LookupStats, LSMTree, TreeConfig
from .workload import KINDS, AbsentKeySource, WorkloadSpec, generate_corpus, generate_workload, sample

log = logging.getLogger(__name__)

VARIANTS = ("traditional", "classifier", "learned")
VARIANT_ALIASES = {"t": "traditional", "c": "classifier", "l": "learned"}
WORKLOAD_ALIASES = {"l0": "level0", "l1": "level1", "l2": "level2", "l3": "level3"}

CSV_COLUMNS = [
    "workload", "variant", "n_ops", "avg_us", "p50_us", "p99_us", "bloom_checks",
    "bloom_bypasses", "bypass_rate_of_total", "bypass_rate_of_checks", "fnr_overall",
    "fnr_l0", "fnr_l1", "fnr_l2", "fnr_l3", "accuracy",
    # extensions
    "speedup", "present_probes", "false_negatives", "wrong_values", "run_searches",
    "bloom_checks_l0", "bloom_checks_l1plus", "model_calls", "backup_queries", "backup_hits",
    "filter_bytes_per_level", "model_bytes_per_level", "backup_bytes_per_level", "manifest_digest",
]

TREE_DIR = "tree"
LABELS = "labels.tsv"
MODELS = "models"
RUN_MANIFEST = "run_manifest.json"


class DataError(LSMError):
    """Missing, stale or incompatible pipeline data."""


class CorrectnessGateError(LSMError):
    """A variant returned a wrong value, or a zero-FN variant lost a key."""


@dataclass
class TrainConfig:
    neg_other: float = 1.0
    neg_absent: float = 1.0
    subsample: float = 0.2
    subsample_threshold: int = 100_000
    seed: int = 11
    classifier_params: GBTParams = CLASSIFIER_PARAMS
    learned_params: GBTParams = LEAN_PARAMS


# -- manifest / labels ------------------------------------------------------

def read_manifest(directory: Path) -> dict:
    path = Path(directory) / RUN_MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{directory} has no {RUN_MANIFEST}; run load first") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt {path}: {exc}") from exc


def write_manifest(directory: Path, doc: dict) -> None:
    atomic_write(Path(directory) / RUN_MANIFEST, json.dumps(doc, indent=1, sort_keys=True).encode())


def manifest_digest(directory: Path) -> str:
    return hashlib.sha256((Path(directory) / RUN_MANIFEST).read_bytes()).hexdigest()[:16]


def write_labels(path: Path, labels: dict[bytes, int]) -> None:
    atomic_write(path, "".join(f"{k.hex()}\t{lv}\n" for k, lv in labels.items()).encode())


def read_labels(path: Path) -> dict[bytes, int]:
    out = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise DataError(f"missing label file {path}") from exc
    for line in text.splitlines():
        k, lv = line.split("\t")
        out[bytes.fromhex(k)] = int(lv)
    return out


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- load -------------------------------------------------------------------

@dataclass
class LoadResult:
    tree: LSMTree
    labels: dict[bytes, int]
    fingerprint: str


def cmd_load(directory: str | Path, seed: int, pairs: int,
             config: TreeConfig | None = None) -> LoadResult:
    """Insert ``pairs`` corpus records, flush, and log each key's resident level."""
    directory = Path(directory)
    if (directory / RUN_MANIFEST).exists() or (directory / TREE_DIR).exists():
        raise DataError(f"{directory} already holds a loaded tree")
    directory.mkdir(parents=True, exist_ok=True)
    config = config or TreeConfig()
    corpus = generate_corpus(seed, pairs)
    tree = LSMTree(config, directory / TREE_DIR)
    for k, v in corpus:
        tree.put(k, v)
    tree.flush()
    labels = tree.residency()
    write_labels(directory / LABELS, labels)
    fingerprint = tree.fingerprint()
    write_manifest(directory, {
        "config": asdict(config),
        "corpus_seed": seed,
        "pairs": pairs,
        "raw_bytes": corpus.raw_bytes,
        "tree_fingerprint": fingerprint,
        "levels": [lv.entry_count for lv in tree.levels],
        "label_count": len(labels),
        "model_digests": {},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    })
    log.info("loaded %d pairs: level sizes %s", pairs, [lv.entry_count for lv in tree.levels])
    return LoadResult(tree, labels, fingerprint)


def open_tree(directory: str | Path) -> LSMTree:
    directory = Path(directory)
    manifest = read_manifest(directory)
    try:
        tree = LSMTree.open(directory / TREE_DIR)
    except StorageError as exc:
        raise DataError(str(exc)) from exc
    if tree.fingerprint() != manifest["tree_fingerprint"]:
        raise DataError("tree files do not match the run manifest fingerprint")
    return tree


# -- train ------------------------------------------------------------------

@dataclass
class LevelTrainReport:
    level: int
    positives: int
    trained_on: int
    negatives: int
    model_bytes: int
    seconds: float
    delta: float | None = None
    backup_bytes: int | None = None
    traditional_bytes: int | None = None
    reduction_percent: float | None = None


def training_sets(labels: dict[bytes, int], level: int, cfg: TrainConfig
                  ) -> tuple[list[bytes], list[bytes], list[bytes]]:
    """(all level keys, sampled positives, negatives) for one level."""
    members = [k for k, lv in labels.items() if lv == level]
    positives = members
    if len(members) > cfg.subsample_threshold:
        positives = sample(members, int(round(cfg.subsample * len(members))), cfg.seed + level)
    others = [k for k, lv in labels.items() if lv != level]
    other_neg = sample(others, int(round(cfg.neg_other * len(positives))), cfg.seed + 100 + level)
    absent = AbsentKeySource(cfg.seed + 200 + level, labels).take(
        int(round(cfg.neg_absent * len(positives))))
    return members, positives, other_neg + absent


def model_path(directory: Path, mode: str, level: int) -> Path:
    suffix = "gbt" if mode == "classifier" else "lbf"
    return Path(directory) / MODELS / f"{mode}_L{level}.{suffix}"


def cmd_train(directory: str | Path, mode: str, cfg: TrainConfig | None = None
              ) -> list[LevelTrainReport]:
    """Fit one model (classifier) or learned filter per non-empty level >= 1."""
    if mode not in ("classifier", "learned"):
        raise ValueError(f"unknown training mode {mode!r}")
    directory = Path(directory)
    cfg = cfg or TrainConfig()
    manifest = read_manifest(directory)
    tree = open_tree(directory)
    labels = read_labels(directory / LABELS)
    (directory / MODELS).mkdir(exist_ok=True)
    bits_per_key = tree.config.bits_per_key
    reports = []
    digests = manifest.setdefault("model_digests", {})
    for level in range(1, len(tree.levels)):
        members, positives, negatives = training_sets(labels, level, cfg)
        if not members:
            log.warning("level %d is empty; no %s model trained", level, mode)
            continue
        t0 = time.perf_counter()
        path = model_path(directory, mode, level)
        if mode == "classifier":
            X = feature_matrix(positives + negatives, RICH45)
            y = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
            model = train(X, y, cfg.classifier_params, RICH45)
            blob = model.to_bytes()
            atomic_write(path, blob)
            rep = LevelTrainReport(level, len(members), len(positives), len(negatives), len(blob),
                                   time.perf_counter() - t0)
        else:
            run_id = tree.levels[level].runs[0].run_id
            lf = build_learned_filter(positives, negatives, cfg.learned_params, bits_per_key,
                                      members=members, run_id=run_id)
            missing = verify_zero_fn(lf, members)
            if missing:
                raise CorrectnessGateError(
                    f"learned filter for level {level} rejects {len(missing)} of its keys")
            atomic_write(path, lf.to_bytes())
            mem = report_memory(lf, bits_per_key)
            rep = LevelTrainReport(level, len(members), len(positives), len(negatives),
                                   mem.model_bytes, time.perf_counter() - t0, lf.delta,
                                   mem.backup_bytes, mem.traditional_bytes, mem.reduction_percent)
        digests[path.name] = _file_digest(path)
        reports.append(rep)
        log.info("trained %s level %d: %s", mode, level, rep)
    manifest[f"train_{mode}"] = {"config": {**asdict(cfg), "classifier_params": asdict(cfg.classifier_params),
                                            "learned_params": asdict(cfg.learned_params)},
                                 "levels": [asdict(r) for r in reports]}
    write_manifest(directory, manifest)
    return reports


def load_classifiers(directory: str | Path) -> LevelClassifierSet:
    models = {}
    for path in sorted((Path(directory) / MODELS).glob("classifier_L*.gbt")):
        level = int(path.stem.split("_L")[1])
        models[level] = GBTModel.from_bytes(path.read_bytes())
    if not models:
        raise DataError(f"no classifier models in {directory}; run train --mode classifier")
    return LevelClassifierSet(models)


def load_learned(directory: str | Path) -> LearnedFilterSet:
    filters = {}
    for path in sorted((Path(directory) / MODELS).glob("learned_L*.lbf")):
        level = int(path.stem.split("_L")[1])
        filters[level] = LearnedFilter.from_bytes(path.read_bytes())
    if not filters:
        raise DataError(f"no learned filters in {directory}; run train --mode learned")
    return LearnedFilterSet(filters)


# -- bench ------------------------------------------------------------------

def _per_level(values: dict[int, int]) -> str:
    return ";".join(f"L{lv}:{n}" for lv, n in sorted(values.items()))


@dataclass
class VariantRun:
    workload: str
    variant: str
    keys: list[bytes]
    truth: list[int | None]
    times_ns: list[int] = field(default_factory=list)
    stats: LookupStats = field(default_factory=LookupStats)
    wrong_values: int = 0
    false_negatives: int = 0
    fn_by_level: dict[int, int] = field(default_factory=dict)
    present_by_level: dict[int, int] = field(default_factory=dict)


def _getter(variant: str, tree: LSMTree, classifiers: LevelClassifierSet | None,
            learned: Mapping[int, LearnedFilter] | None) -> Callable:
    if variant == "traditional":
        return tree.get
    if variant == "classifier":
        return lambda key, stats: get_classifier(tree, classifiers, key, stats)
    if variant == "learned":
        return lambda key, stats: get_learned(tree, learned, key, stats)
    raise ValueError(f"unknown variant {variant!r}")


def run_interleaved(tree: LSMTree, getters: dict[str, Callable], keys: Sequence[bytes],
                    reference: dict[bytes, bytes], truth: Sequence[int | None],
                    workload: str, warmup: int = 200) -> dict[str, VariantRun]:
    """Time every variant on the same key sequence, rotating the order per op."""
    names = list(getters)
    runs = {v: VariantRun(workload, v, list(keys), list(truth)) for v in names}
    for key in keys[:warmup]:
        for v in names:
            getters[v](key, None)
    clock = time.perf_counter_ns
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i, key in enumerate(keys):
            expected = reference.get(key)
            level = truth[i]
            for j in range(len(names)):
                v = names[(i + j) % len(names)]
                run = runs[v]
                get = getters[v]
                t0 = clock()
                got = get(key, run.stats)
                run.times_ns.append(clock() - t0)
                if got is None:
                    if expected is not None:
                        run.false_negatives += 1
                        run.fn_by_level[level] = run.fn_by_level.get(level, 0) + 1
                elif got != expected:
                    run.wrong_values += 1
                if expected is not None:
                    run.present_by_level[level] = run.present_by_level.get(level, 0) + 1
    finally:
        if gc_was_enabled:
            gc.enable()
    return runs


def metrics_row(run: VariantRun, baseline_avg_us: float | None, memory: dict[str, str],
                digest: str) -> dict:
    us = np.asarray(run.times_ns, dtype=np.float64) / 1000.0
    n = len(run.times_ns)
    bp = measure_bypass(run.stats)
    present = sum(run.present_by_level.values())
    avg = float(us.mean()) if n else 0.0
    row = {
        "workload": run.workload,
        "variant": run.variant,
        "n_ops": n,
        "avg_us": round(avg, 4),
        "p50_us": round(float(np.percentile(us, 50)), 4) if n else 0.0,
        "p99_us": round(float(np.percentile(us, 99)), 4) if n else 0.0,
        "bloom_checks": run.stats.bloom_checks,
        "bloom_bypasses": run.stats.bypasses,
        "bypass_rate_of_total": round(bp.rate_of_total, 4),
        "bypass_rate_of_checks": round(bp.rate_of_checks, 4),
        "fnr_overall": round(run.false_negatives / present, 6) if present else 0.0,
        "accuracy": round(1.0 - (run.false_negatives + run.wrong_values) / n, 6) if n else 1.0,
        "speedup": round(baseline_avg_us / avg, 4) if baseline_avg_us and avg else "",
        "present_probes": present,
        "false_negatives": run.false_negatives,
        "wrong_values": run.wrong_values,
        "run_searches": run.stats.run_searches,
        "bloom_checks_l0": run.stats.bloom_checks_l0,
        "bloom_checks_l1plus": run.stats.bloom_checks - run.stats.bloom_checks_l0,
        "model_calls": run.stats.model_calls,
        "backup_queries": run.stats.backup_queries,
        "backup_hits": run.stats.backup_hits,
        **memory,
        "manifest_digest": digest,
    }
    for lv in range(4):
        p = run.present_by_level.get(lv, 0)
        row[f"fnr_l{lv}"] = round(run.fn_by_level.get(lv, 0) / p, 6) if p else ""
    return {c: row[c] for c in CSV_COLUMNS}


def memory_columns(tree: LSMTree, variant: str, classifiers: LevelClassifierSet | None,
                   learned: Mapping[int, LearnedFilter] | None) -> dict[str, str]:
    filters = {lv.index: sum(r.bloom.serialized_size() for r in lv.runs)
               for lv in tree.levels if lv.runs}
    models: dict[int, int] = {}
    backups: dict[int, int] = {}
    if variant == "classifier" and classifiers is not None:
        models = {lv: m.serialized_size() for lv, m in classifiers.models.items()}
    if variant == "learned" and learned is not None:
        models = {lv: f.model.serialized_size() for lv, f in learned.items()}
        backups = {lv: f.backup.serialized_size() for lv, f in learned.items()}
        filters = {lv: b for lv, b in filters.items() if lv not in learned}
    return {"filter_bytes_per_level": _per_level(filters),
            "model_bytes_per_level": _per_level(models),
            "backup_bytes_per_level": _per_level(backups)}


@dataclass
class BenchResult:
    rows: list[dict]
    runs: dict[tuple[str, str], VariantRun]
    filter_times: list[dict]
    csv_path: Path | None = None


def filter_query_times(tree: LSMTree, learned: Mapping[int, LearnedFilter] | None,
                       keys: Sequence[bytes], repeats: int = 3) -> list[dict]:
    """Mean per-query time of each level's traditional and learned filter."""
    from .keys import key_halves
    halves = [key_halves(k) for k in keys]
    out = []
    clock = time.perf_counter_ns
    for lv in tree.levels[1:]:
        if not lv.runs:
            continue
        bloom = lv.runs[0].bloom
        kinds: list[tuple[str, Callable]] = [("traditional", bloom.contains_halves)]
        if learned and lv.index in learned:
            kinds.append(("learned", learned[lv.index].query_halves))
        for kind, fn in kinds:
            for hi, lo in halves[:50]:
                fn(hi, lo)
            best = None
            for _ in range(repeats):
                t0 = clock()
                for hi, lo in halves:
                    fn(hi, lo)
                dt = (clock() - t0) / max(1, len(halves))
                best = dt if best is None else min(best, dt)
            out.append({"level": lv.index, "filter": kind, "mean_ns": round(best, 1),
                        "queries": len(halves)})
    return out


def cmd_bench(directory: str | Path, variants: Iterable[str] = VARIANTS,
              workloads: Iterable[str] = KINDS, n_ops: int = 2000,
              out: str | Path | None = None, seed: int = 7, present_fraction: float = 0.8,
              classifiers: LevelClassifierSet | None = None,
              learned: Mapping[int, LearnedFilter] | None = None) -> BenchResult:
    """Run every (workload, variant) pair on identical key sequences."""
    directory = Path(directory)
    variants = [VARIANT_ALIASES.get(v, v) for v in variants]
    workloads = [WORKLOAD_ALIASES.get(w, w) for w in workloads]
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    manifest = read_manifest(directory)
    tree = open_tree(directory)
    labels = read_labels(directory / LABELS)
    if "classifier" in variants and classifiers is None:
        classifiers = load_classifiers(directory)
    if "learned" in variants and learned is None:
        learned = load_learned(directory)
    elif learned is not None and not isinstance(learned, LearnedFilterSet):
        learned = LearnedFilterSet(learned)
    reference = generate_corpus(manifest["corpus_seed"], manifest["pairs"]).as_dict()
    digest = manifest_digest(directory)
    getters = {v: _getter(v, tree, classifiers, learned) for v in variants}

    rows: list[dict] = []
    all_runs: dict[tuple[str, str], VariantRun] = {}
    filter_keys: list[bytes] = []
    for kind in workloads:
        try:
            keys = generate_workload(WorkloadSpec(kind, n_ops, seed, present_fraction), labels)
        except ValueError as exc:
            log.warning("skipping workload %s: %s", kind, exc)
            continue
        if kind == "random":
            filter_keys = keys
        truth = [labels.get(k) for k in keys]
        runs = run_interleaved(tree, getters, keys, reference, truth, kind)
        base = runs["traditional"].times_ns if "traditional" in runs else None
        base_avg = float(np.mean(base)) / 1000.0 if base else None
        for v in variants:
            run = runs[v]
            all_runs[(kind, v)] = run
            rows.append(metrics_row(run, base_avg if v != "traditional" else None,
                                    memory_columns(tree, v, classifiers, learned), digest))
    filter_times = filter_query_times(tree, learned, filter_keys or list(labels)[:n_ops])
    result = BenchResult(rows, all_runs, filter_times)
    if out is not None:
        result.csv_path = write_bench_outputs(Path(out), result)
    bad = [r for r in rows if r["wrong_values"]
           or (r["variant"] != "classifier" and r["false_negatives"])]
    if bad:
        raise CorrectnessGateError(
            "correctness gate failed: " + ", ".join(
                f"{r['workload']}/{r['variant']} wrong={r['wrong_values']} fn={r['false_negatives']}"
                for r in bad))
    return result


def write_bench_outputs(out: Path, result: BenchResult) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(result.rows)
    with open(trace_path(out), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["workload", "variant", "op_index", "us"])
        for (kind, v), run in result.runs.items():
            for i, ns in enumerate(run.times_ns):
                w.writerow([kind, v, i, f"{ns / 1000.0:.3f}"])
    with open(filters_path(out), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["level", "filter", "mean_ns", "queries"])
        w.writeheader()
        w.writerows(result.filter_times)
    summary_path(out).write_text(format_summary(result.rows))
    return out


def trace_path(out: Path) -> Path:
    return out.with_name(out.stem + ".trace.csv")


def filters_path(out: Path) -> Path:
    return out.with_name(out.stem + ".filters.csv")


def summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.txt")


def format_summary(rows: Sequence[dict]) -> str:
    head = f"{'workload':<11}{'variant':<12}{'avg_us':>9}{'p99_us':>9}{'speedup':>8}" \
           f"{'checks':>8}{'bypass':>8}{'byp%chk':>8}{'fnr':>8}{'wrong':>6}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['workload']:<11}{r['variant']:<12}{r['avg_us']:>9.2f}{r['p99_us']:>9.2f}"
                     f"{(r['speedup'] if r['speedup'] != '' else 1.0):>8.2f}{r['bloom_checks']:>8}"
                     f"{r['bloom_bypasses']:>8}{r['bypass_rate_of_checks']:>8.2f}"
                     f"{r['fnr_overall']:>8.4f}{r['wrong_values']:>6}")
    return "\n".join(lines) + "\n"


# -- report -----------------------------------------------------------------

def _read_rows(path: Path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_COLUMNS:
                raise DataError(f"{path} does not have the bench CSV header")
            return list(reader)
    except FileNotFoundError as exc:
        raise DataError(f"missing results file {path}") from exc


def _parse_per_level(text: str) -> dict[int, int]:
    out = {}
    for part in filter(None, text.split(";")):
        lv, n = part.split(":")
        out[int(lv[1:])] = int(n)
    return out


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def cmd_report(csv_in: str | Path, out_dir: str | Path) -> dict[str, Path]:
    """Write one plain CSV per figure from a bench result file."""
    csv_in, out_dir = Path(csv_in), Path(out_dir)
    rows = _read_rows(csv_in)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    files["latency"] = _write_csv(
        out_dir / "latency.csv", ["workload", "variant", "avg_us", "p50_us", "p99_us"],
        [(r["workload"], r["variant"], r["avg_us"], r["p50_us"], r["p99_us"]) for r in rows])
    files["speedup"] = _write_csv(
        out_dir / "speedup.csv", ["workload", "variant", "speedup"],
        [(r["workload"], r["variant"], r["speedup"]) for r in rows if r["variant"] != "traditional"])
    files["bypass"] = _write_csv(
        out_dir / "bypass.csv",
        ["workload", "bloom_checks", "bloom_bypasses", "bypass_rate_of_total",
         "bypass_rate_of_checks", "fnr_overall", "fnr_l0", "fnr_l1", "fnr_l2", "fnr_l3", "accuracy"],
        [(r["workload"], r["bloom_checks"], r["bloom_bypasses"], r["bypass_rate_of_total"],
          r["bypass_rate_of_checks"], r["fnr_overall"], r["fnr_l0"], r["fnr_l1"], r["fnr_l2"],
          r["fnr_l3"], r["accuracy"]) for r in rows if r["variant"] == "classifier"])
    learned_rows = [r for r in rows if r["variant"] == "learned"]
    trad_rows = [r for r in rows if r["variant"] == "traditional"]
    mem_rows = []
    if learned_rows and trad_rows:
        trad = _parse_per_level(trad_rows[0]["filter_bytes_per_level"])
        models = _parse_per_level(learned_rows[0]["model_bytes_per_level"])
        backups = _parse_per_level(learned_rows[0]["backup_bytes_per_level"])
        for lv in sorted(models):
            t = trad.get(lv, 0)
            learned_total = models[lv] + backups.get(lv, 0)
            mem_rows.append((lv, t, models[lv], backups.get(lv, 0), learned_total,
                             round(100.0 * (1 - learned_total / t), 3) if t else ""))
    files["memory"] = _write_csv(
        out_dir / "filter_memory.csv",
        ["level", "traditional_bytes", "model_bytes", "backup_bytes", "learned_bytes",
         "reduction_percent"], mem_rows)
    trace_rows = []
    tp = trace_path(csv_in)
    if tp.exists():
        with open(tp, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            trace_rows = list(reader)
    files["trace"] = _write_csv(out_dir / "per_lookup_trace.csv",
                                ["workload", "variant", "op_index", "us"], trace_rows)
    ft_rows = []
    fp = filters_path(csv_in)
    if fp.exists():
        with open(fp, newline="") as fh:
            ft_rows = [(r["level"], r["filter"], r["mean_ns"]) for r in csv.DictReader(fh)]
    files["filter_time"] = _write_csv(out_dir / "filter_query_time.csv",
                                      ["level", "filter", "mean_ns"], ft_rows)
    return files


def traditional_filter_bytes(n_keys: int, bits_per_key: float) -> int:
    return BloomFilter.create(max(1, n_keys), bits_per_key).serialized_size()
