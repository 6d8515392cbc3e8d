from __future__ import annotations

import pytest

from statenet.workload.generator import TraceParams, gen_trace

SMALL = TraceParams(
    accounts=2000, blocks=20, txs_per_block=20, hot_ranks=100, slot_universe=4096, low_touch_target=None, code_access_mean=2000.0
)


@pytest.fixture(scope="session")
def default_trace():
    """The calibrated default workload (seed 1) and its report."""
    return gen_trace(TraceParams(), 1)


@pytest.fixture(scope="session")
def small_trace():
    return gen_trace(SMALL, 3)[0]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
