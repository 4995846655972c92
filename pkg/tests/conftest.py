import numpy as np
import pytest

from pteit.fem import ForwardModel
from pteit.mesh import make_disc_mesh


@pytest.fixture(scope="session")
def mesh64():
    return make_disc_mesh(1.0, n_rings=2, n_electrodes=16)


@pytest.fixture(scope="session")
def mesh256():
    return make_disc_mesh(1.0, n_rings=4, n_electrodes=16)


@pytest.fixture(scope="session")
def model64(mesh64):
    return ForwardModel(mesh64)


@pytest.fixture(scope="session")
def model256(mesh256):
    return ForwardModel(mesh256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = {}
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines.update(getattr(mod, "LINES", {}))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
