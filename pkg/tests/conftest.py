import numpy as np
import pytest

from jumpflow import fixtures as fx
from jumpflow import nonlocal_op as no
from jumpflow import zvonkin as zv

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def spec1():
    return fx.work_1d()


@pytest.fixture(scope="session")
def quad1(spec1):
    return no.build_quadrature(spec1)


@pytest.fixture(scope="session")
def grid1():
    return fx.grid_1d()


@pytest.fixture(scope="session")
def holder_b(grid1):
    return fx.drift("holder", grid1)


@pytest.fixture(scope="session")
def transform1(holder_b, quad1, spec1):
    return zv.build_transform(holder_b, no.SigmaField.identity(1), quad1, alpha=spec1.alpha, beta=0.6)


@pytest.fixture(scope="session")
def zero_transform(grid1, quad1):
    zero = fx.drift("zero", grid1)
    return zv.build_transform(zero, no.SigmaField.identity(1), quad1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
