import numpy as np
import pytest

FD_STEP = 1e-5


def numeric_grad(f, arr, step=FD_STEP):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + step
        fp = f()
        arr[i] = old - step
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
