import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from compolayout import kernels  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def _available_backends():
    names = ["python"]
    try:
        from compolayout import _kernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per kernel backend, restoring the default afterwards."""
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an exit criterion and fail the test on FAIL."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def _verdict(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return _verdict


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split("]")[0].split()[-1])):
            terminalreporter.write_line(line)
