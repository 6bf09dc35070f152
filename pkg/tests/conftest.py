import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

from episteme.data import generate_dataset
from episteme.m2vae import VaeConfig, init_m2vae, pretrain


TIMINGS = {}


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(600, 0.2, np.random.default_rng(0))


@pytest.fixture(scope="session")
def heldout_dataset():
    return generate_dataset(300, 0.2, np.random.default_rng(12345))


@pytest.fixture(scope="session")
def trained_vae(default_dataset):
    """Default-config model after the full 200-epoch schedule, with its loss history."""
    t0 = time.perf_counter()
    params, history = pretrain(init_m2vae(VaeConfig()), default_dataset.obs)
    TIMINGS["pretrain"] = time.perf_counter() - t0
    return params, history


ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; results print once at the end of the run."""
    def record(name, ok, detail):
        ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
