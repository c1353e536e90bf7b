import sys
from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(__file__).resolve().parent / "data" / "mnist5k"
CONFIG_DIR = ROOT / "configs"


@pytest.fixture
def mnist_dir() -> Path:
    return MNIST_DIR


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
    missing = sorted(set(range(1, 11)) - set(results))
    if missing:
        terminalreporter.write_line(f"criteria not run or errored before reporting: {missing}")
