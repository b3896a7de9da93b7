import numpy as np
import pytest

from slotpack.engine import HeContext, HeParams
from slotpack.packing import PackLayout


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_ctx(n_slots=1024, **kw):
    return HeContext(HeParams(n_slots=n_slots, **kw))


def layout(channels, side, grid=32):
    return PackLayout(grid // side, grid, channels, side)


# acceptance results, printed as one line each at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
