import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from learned_lsm.lsm import LSMTree, TreeConfig  # noqa: E402
from learned_lsm.workload import generate_corpus  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# 64-entry MemTable: small enough that a few thousand puts populate L0..L2
SMALL_MEMTABLE = 64 * 116


def small_config(**kw) -> TreeConfig:
    kw.setdefault("memtable_bytes", SMALL_MEMTABLE)
    return TreeConfig(**kw)


@pytest.fixture(scope="session")
def corpus_8k():
    return generate_corpus(2024, 8000)


@pytest.fixture(scope="session")
def tree_8k(corpus_8k):
    """In-memory tree over 8 000 pairs: L0 partial, L1 full, L2 populated."""
    tree = LSMTree(small_config())
    for k, v in corpus_8k:
        tree.put(k, v)
    tree.flush()
    return tree


# desk configuration: 10^5 pairs over a 64-entry MemTable fills L0..L3
DESK_SEED, DESK_PAIRS = 42, 100_000


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    from learned_lsm.bench import cmd_load
    path = tmp_path_factory.mktemp("desk") / "run"
    cmd_load(path, DESK_SEED, DESK_PAIRS, small_config())
    return path


@pytest.fixture(scope="session")
def desk_learned(desk_dir):
    from learned_lsm.bench import cmd_train
    return cmd_train(desk_dir, "learned")
