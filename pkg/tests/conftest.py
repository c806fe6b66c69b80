import numpy as np
import pytest

from rlaugment.controller import init_controller
from rlaugment.trainee import SyntheticTask, gen_synthetic


@pytest.fixture(scope="session")
def synthetic():
    return gen_synthetic(SyntheticTask())


@pytest.fixture
def zero_controller():
    return init_controller(zero=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from tests import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            ok, detail = test_acceptance.RESULTS[n]
            terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
