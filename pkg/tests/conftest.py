import numpy as np
import pytest

from dpsvrg.data import synth_dataset
from dpsvrg.objective import CompositeObjective, Dataset
from dpsvrg.proximal import Regularizer


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_logistic():
    data, _ = synth_dataset(40, 6, 2, 0.1, seed=3, m=4)
    return CompositeObjective("logistic", data, Regularizer("l1", 0.01))


@pytest.fixture
def small_lsq(rng):
    X = rng.standard_normal((40, 6))
    y = X @ rng.standard_normal(6) + 0.1 * rng.standard_normal(40)
    return CompositeObjective("least_squares", Dataset.split(X, y, 4), Regularizer("l1", 0.01))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, line = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
