import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synthetic  # noqa: E402

DATA_ENV = "EVOENSEMBLE_DATA"


@pytest.fixture(scope="session")
def surrogate_csv(tmp_path_factory) -> Path:
    """800-row schema-identical synthetic table."""
    return synthetic.write_csv(tmp_path_factory.mktemp("data") / "surrogate.csv", 800, seed=3)


@pytest.fixture(scope="session")
def real_csv() -> Path | None:
    path = os.environ.get(DATA_ENV)
    return Path(path) if path and Path(path).exists() else None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """``criterion(id, ok, detail)`` records one PASS/FAIL line, prints it and
    fails the test when ``ok`` is false."""

    def record(cid: str, ok: bool, detail: str) -> None:
        line = f"{cid} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
