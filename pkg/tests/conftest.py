import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tilegrade.experiment import DATA_DIR  # noqa: E402
from tilegrade.network import load_network  # noqa: E402


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def desk():
    return load_network(DATA_DIR / "desk.json")


@pytest.fixture(scope="session")
def pelvic():
    return load_network(DATA_DIR / "pelvic.json")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
