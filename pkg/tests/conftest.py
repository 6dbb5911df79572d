import numpy as np
import pytest

from emdnet.dataset import build_corpus

_CRITERIA: list[tuple[str, bool, str]] = []


def numeric_grad(f, arr, h=1e-5, coords=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (modified in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, floor=1e-8):
    """||a - b|| / max(||a||, ||b||, floor).

    The floor sits above the central-difference noise (~1e-11 at h=1e-5), so
    structurally zero gradients, such as a conv bias feeding train-mode batch
    norm, compare as equal instead of as 100% error.
    """
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture(scope="session")
def toy_corpus():
    return build_corpus(8, 16, 32, seed=0)


@pytest.fixture(scope="session")
def criteria_report():
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
