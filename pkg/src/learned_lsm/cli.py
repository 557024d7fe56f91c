"""Command-line entry point: ``learned-lsm load|train|bench|report``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .bench import (VARIANTS, CorrectnessGateError, DataError, TrainConfig, cmd_bench,
                    cmd_load, cmd_report, cmd_train, format_summary)
from .errors import LSMError, StorageError
from .lsm import TreeConfig
from .workload import KINDS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def parse_neg_ratio(text: str) -> tuple[float, float]:
    """``"1:1"`` (other-level : absent per positive), ``"1:1:1"`` or a single number for both."""
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 3:
        if parts[0] <= 0:
            raise ValueError("positive share must be > 0")
        parts = [parts[1] / parts[0], parts[2] / parts[0]]
    elif len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) < 0:
        raise ValueError(f"bad negative ratio {text!r}")
    return parts[0], parts[1]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="learned-lsm", description="Learned-filter LSM-tree experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("load", help="build a tree from a seeded corpus")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--pairs", type=int, required=True)
    s.add_argument("--dir", required=True)
    s.add_argument("--memtable-bytes", type=int, default=TreeConfig.memtable_bytes)
    s.add_argument("--size-ratio", type=int, default=TreeConfig.size_ratio)
    s.add_argument("--bits-per-key", type=float, default=TreeConfig.bits_per_key)
    s.add_argument("--filter-policy", choices=("uniform", "monkey"), default="uniform")

    s = sub.add_parser("train", help="fit per-level classifiers or learned filters")
    s.add_argument("--dir", required=True)
    s.add_argument("--mode", choices=("classifier", "learned"), required=True)
    s.add_argument("--neg-ratio", default="1:1:1",
                   help="positives:other-level:absent (default 1:1:1)")
    s.add_argument("--subsample", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=11)

    s = sub.add_parser("bench", help="time every variant on every workload")
    s.add_argument("--dir", required=True)
    s.add_argument("--variants", type=_csv_list, default=list(VARIANTS))
    s.add_argument("--workloads", type=_csv_list, default=list(KINDS))
    s.add_argument("--ops", type=int, default=2000)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7)

    s = sub.add_parser("report", help="write one data file per figure")
    s.add_argument("--in", dest="csv_in", required=True)
    s.add_argument("--out", required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "load":
            cfg = TreeConfig(memtable_bytes=args.memtable_bytes, size_ratio=args.size_ratio,
                             bits_per_key=args.bits_per_key, filter_policy=args.filter_policy)
            res = cmd_load(args.dir, args.seed, args.pairs, cfg)
            sizes = [lv.entry_count for lv in res.tree.levels]
            print(f"loaded {args.pairs} pairs; level sizes {sizes}; fingerprint {res.fingerprint[:16]}")
        elif args.command == "train":
            other, absent = parse_neg_ratio(args.neg_ratio)
            reports = cmd_train(args.dir, args.mode,
                                TrainConfig(neg_other=other, neg_absent=absent,
                                            subsample=args.subsample, seed=args.seed))
            for r in reports:
                extra = ""
                if r.delta is not None:
                    extra = (f" delta={r.delta:.4f} backup={r.backup_bytes}B"
                             f" traditional={r.traditional_bytes}B reduction={r.reduction_percent:.1f}%")
                print(f"L{r.level}: keys={r.positives} trained_on={r.trained_on} "
                      f"negatives={r.negatives} model={r.model_bytes}B {r.seconds:.1f}s{extra}")
        elif args.command == "bench":
            res = cmd_bench(args.dir, args.variants, args.workloads, args.ops, args.out, args.seed)
            print(format_summary(res.rows), end="")
        else:
            files = cmd_report(args.csv_in, args.out)
            for name, path in files.items():
                print(f"{name}: {path}")
    except CorrectnessGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (DataError, StorageError, LSMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
