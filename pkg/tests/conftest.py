import json
from pathlib import Path

import numpy as np
import pytest

import adderfrag as af
from adderfrag.eigensolver import power_iterate

DERIVED = json.loads((Path(__file__).with_name("data") / "derived.json").read_text())

# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def derived():
    return DERIVED


@pytest.fixture(scope="session")
def hyp_op():
    return af.TransitionOperator.build(af.FragmentationKernel.equal_mitosis(), af.DivisionRate.hyperbolic(2.0, 1.0))


@pytest.fixture(scope="session")
def hyp_result(hyp_op):
    return power_iterate(hyp_op, 50.0, n=4096)


@pytest.fixture(scope="session")
def hyp_small(hyp_op):
    return power_iterate(hyp_op, 20.0, n=1024)


@pytest.fixture(scope="session")
def mitosis_op():
    """Equal mitosis with a constant rate: the transport reference model."""
    return af.TransitionOperator.build(af.FragmentationKernel.equal_mitosis(), af.DivisionRate.constant(2.0, 0.5))


@pytest.fixture(scope="session")
def uniform_op():
    return af.TransitionOperator.build(af.FragmentationKernel.uniform(0.3, 0.7), af.DivisionRate.constant(2.0, 0.5))


@pytest.fixture(scope="session")
def small_transport(mitosis_op):
    """Coarse (a, s) grids with the matching stationary profile, for fast transport tests."""
    from adderfrag.transport import stationary_profile

    a = af.Grid1D(0.0, 8.0, 128)
    s = af.Grid1D(0.5, 5.0, 128)
    return a, s, stationary_profile(mitosis_op, a, s)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def mitosis_small(mitosis_op):
    return power_iterate(mitosis_op, 20.0, n=1024)


@pytest.fixture(scope="session")
def hyp_wide(hyp_op):
    """Sigma = 50 on a moderate grid: little truncated tail, cheap to build."""
    return power_iterate(hyp_op, 50.0, n=2048)
