import numpy as np
import pytest

from volqml.innovations import InnovationSpec, RngStream
from volqml.models import ModelSpec
from volqml.sre import simulate_stationary

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")


@pytest.fixture
def report():
    """Record one acceptance line, print it, then assert."""

    def _report(name: str, ok: bool, detail: str):
        ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
        assert ok, f"criterion {name}: {detail}"

    return _report


@pytest.fixture(scope="session")
def garch_path():
    model = ModelSpec("garch", 1, 1)
    return simulate_stationary(model, np.array([0.1, 0.2, 0.5]), InnovationSpec(), RngStream(7), 2000)


@pytest.fixture(scope="session")
def agarch22_path():
    model = ModelSpec("agarch", 2, 2)
    theta = np.array([0.1, 0.1, 0.05, 0.3, 0.2, 0.2])
    return simulate_stationary(model, theta, InnovationSpec(), RngStream(8), 1500)


@pytest.fixture(scope="session")
def egarch_path():
    model = ModelSpec("egarch")
    return simulate_stationary(model, np.array([-0.1, 0.8, -0.1, 0.3]), InnovationSpec(), RngStream(9), 2000)
