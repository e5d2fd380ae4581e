import json
from importlib.resources import files

import pytest

import tlroa

SHIPPED = files("tlroa") / "data" / "plant.json"

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def shipped_config():
    return tlroa.load_config(SHIPPED)


@pytest.fixture(scope="session")
def shipped_eq(shipped_config):
    return tlroa.solve_equilibrium(shipped_config.plant)


@pytest.fixture(scope="session")
def shipped_ellipsoid(shipped_config, shipped_eq):
    a = tlroa.linearize(shipped_config.plant, shipped_eq).a_full
    return tlroa.build_initial_roa(tlroa.solve_lyapunov(a), shipped_config.analysis.level)


@pytest.fixture
def small_config_file(tmp_path):
    """Shipped plant with a short horizon and few samples, for fast pipeline tests."""
    d = json.loads(SHIPPED.read_text())
    d["analysis"].update(n_samples=32, horizon=0.05)
    d["schedule"].update(duration_max=0.1)
    path = tmp_path / "plant.json"
    path.write_text(json.dumps(d))
    return path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES.values():
            terminalreporter.write_line(line)
