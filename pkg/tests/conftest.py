import numpy as np
import pytest
from hypothesis import settings

from tinyvid import numerics as nx
from tinyvid.denoiser import ArchConfig

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _finite_checks():
    # NaN/Inf surfacing is on for the whole suite
    with nx.check_finite(True):
        yield


@pytest.fixture
def tiny_arch():
    return ArchConfig(channels=(8, 16), emb_dim=8, temb_dim=16, groups=4, pos_dim=4, max_tokens=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    n = mark.args[0]
    lines = item.config.stash[ACCEPTANCE]
    if report.failed and "PASS" not in lines.get(n, "FAIL"):
        lines.setdefault(n, f"criterion {n:>2}: FAIL  {call.excinfo.typename}: {call.excinfo.value}")
    elif report.failed:
        lines[n] = lines[n].replace("PASS", "FAIL", 1)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion; returns the outcome for asserting."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE][n] = line
        print(line)
        return ok

    return record
