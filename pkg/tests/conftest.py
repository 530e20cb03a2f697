import time
from pathlib import Path

import pytest

from cwa.model import ModelConfig
from cwa.model_io import make_reference_model

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def tiny():
    """Two-layer model small enough for per-test generation."""
    return make_reference_model(3, ModelConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32,
                                               vocab_size=300, max_seq=80))


@pytest.fixture(scope="session")
def reference():
    """The desk-scale reference model: L=4, H=4, d_model=64, d_ff=128, V=300."""
    return make_reference_model(0)


SUITE_LIMIT = 180.0


def pytest_sessionstart(session):
    session.config._cwa_start = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from tests.test_acceptance import RESULTS
    if not RESULTS:
        return
    elapsed = time.perf_counter() - config._cwa_start
    terminalreporter.section("acceptance criteria")
    for n in range(1, 9):
        if n not in RESULTS:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
            continue
        ok, detail = RESULTS[n]
        if n == 8:
            ok = ok and elapsed < SUITE_LIMIT
            detail += f"; suite time {elapsed:.1f}s (limit {SUITE_LIMIT:.0f}s)"
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - session.config._cwa_start
    if elapsed >= SUITE_LIMIT and exitstatus == 0:
        session.exitstatus = 1
