import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blockcascade import CascadeConfig, init_model

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{outcome}  {name}")


@pytest.fixture(scope="session")
def small_config():
    """Cheap geometry shared by unit tests: 5 blocks, uniform unit pass cost."""
    return CascadeConfig(total_frames=15, workers=1, pass_cost_base=1.0)


@pytest.fixture(scope="session")
def paper_config():
    """The conventional 13-block measurement setup."""
    return CascadeConfig(total_frames=39, workers=1, pass_cost_base=1.0)


@pytest.fixture(scope="session")
def weights(small_config):
    c = small_config
    return init_model(11, c.layers, c.heads, c.latent_dim, c.cond_dim)
