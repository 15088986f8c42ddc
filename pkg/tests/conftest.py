import re

import numpy as np
import pytest

from glulab import _kernels_py
from glulab.tensor import precision

try:
    from glulab import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = [_kernels_py] + ([_kernels_c] if _kernels_c is not None else [])


@pytest.fixture(autouse=True)
def float64():
    with precision("float64"):
        yield


@pytest.fixture(params=BACKENDS, ids=lambda m: m.BACKEND)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance check; asserts ``ok``."""
    results = request.config.stash.setdefault(CRITERIA, {})

    def record(number: int, ok: bool, detail: str):
        results.setdefault(number, []).append((bool(ok), detail))
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(CRITERIA, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        entries = results[number]
        status = "PASS" if all(ok for ok, _ in entries) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}")
        for ok, detail in entries:
            terminalreporter.write_line(f"    [{'ok' if ok else 'FAIL'}] {detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # a criterion test that fails outside ``criterion(...)`` still marks it FAIL
    outcome = yield
    report = outcome.get_result()
    match = re.match(r"test_c(\d+)_", item.name)
    if match and report.failed and call.excinfo is not None and not str(call.excinfo.value).startswith("criterion "):
        entries = item.config.stash.setdefault(CRITERIA, {}).setdefault(int(match.group(1)), [])
        entries.append((False, f"{item.name}: {call.excinfo.exconly().splitlines()[0]}"))
