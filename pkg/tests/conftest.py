import numpy as np
import pytest


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance verdict and asserts it."""
    def record(n, ok, detail=""):
        _CRITERIA.append((n, bool(ok), detail))
        assert ok, f"criterion {n} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
