import numpy as np
import pytest

from freezecl.dataio import DriftSpec, synth_sequence
from freezecl.netmodel import ModelSpec, init_model
from freezecl.trainer import Hyper

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_spec():
    return ModelSpec.from_widths([4, 6, 5, 3, 2], split_index=2)


@pytest.fixture
def tiny_model(tiny_spec):
    return init_model(tiny_spec, 0)


@pytest.fixture(scope="session")
def small_drift():
    return DriftSpec(dim=6, n_tasks=3, n_train=120, n_val=40, n_eval=60)


@pytest.fixture(scope="session")
def small_tasks(small_drift):
    return synth_sequence(small_drift, seed=0)


@pytest.fixture
def quick_hyper():
    return Hyper(epochs=3, patience=2, batch_size=16, lr0=1e-2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
