import numpy as np
import pytest

from tomotactile import build_shell_mesh, build_volume_mesh
from tomotactile.jacobian import build_jacobian


@pytest.fixture(scope="session")
def shell45():
    return build_shell_mesh()


@pytest.fixture(scope="session")
def jac45(shell45):
    return build_jacobian(shell45)


@pytest.fixture(scope="session")
def small_volume():
    # 16x16x3 keeps a node on the axis and on every electrode
    return build_volume_mesh(divisions=(16, 16, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
