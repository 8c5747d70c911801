import numpy as np
import pytest

from dhdist.pencil import gen_random_dh, example_5x5


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical runs")


@pytest.fixture(scope="session")
def example_pencil():
    return example_5x5()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[3, 4, 5, 6])
def random_pencil(request):
    return gen_random_dh(request.param, seed=request.param)


def random_sym(rng, n):
    A = rng.standard_normal((n, n))
    return 0.5 * (A + A.T)


def random_skew(rng, n):
    A = rng.standard_normal((n, n))
    return 0.5 * (A - A.T)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    lines = test_acceptance.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
