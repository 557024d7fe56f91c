"""LSM-tree with Bloom, classifier-guided and learned per-level filters."""

from .bloom import (BloomFilter, MonkeyAllocation, estimate_total_filter_bits, monkey_allocate,
                    theoretical_fpr)
from .classifier import LevelClassifierSet, get_classifier, measure_bypass, measure_fnr
from .errors import (CorruptFileError, LSMError, SchemaMismatchError, SingleClassError,
                     StorageError)
from .features import LEAN12, RICH45, extract_lean, extract_rich, feature_matrix
from .gbt import GBTModel, GBTParams, train
from .learned import LearnedFilter, build_learned_filter, get_learned, report_memory
from .lsm import LookupStats, LSMTree, TreeConfig
from .workload import WorkloadSpec, generate_corpus, generate_workload

__version__ = "0.1.0"

__all__ = [
    "BloomFilter", "CorruptFileError", "GBTModel", "GBTParams", "LEAN12", "LSMError", "LSMTree",
    "LearnedFilter", "LevelClassifierSet", "LookupStats", "MonkeyAllocation", "RICH45",
    "SchemaMismatchError", "SingleClassError", "StorageError", "TreeConfig", "WorkloadSpec",
    "build_learned_filter", "estimate_total_filter_bits", "extract_lean", "extract_rich",
    "feature_matrix", "generate_corpus", "generate_workload", "get_classifier", "get_learned",
    "measure_bypass", "measure_fnr", "monkey_allocate", "report_memory", "theoretical_fpr", "train",
]
