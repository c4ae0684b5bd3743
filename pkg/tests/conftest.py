import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from entropart.datagen import GenSpec, generate  # noqa: E402

ACCEPTANCE: dict = {}


def record(criterion: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (name, bool(passed), detail)


@functools.lru_cache(maxsize=None)
def reference_dataset(seed: int = 0):
    """Desk-scale planted graph: 20k nodes, degree 20, 64-d features, 4 imbalanced classes, homophily 0.9."""
    return generate(GenSpec(seed=seed))


@functools.lru_cache(maxsize=None)
def small_dataset(seed: int = 0, n: int = 2000):
    return generate(GenSpec(num_nodes=n, avg_degree=12, seed=seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {name}: {detail}")
