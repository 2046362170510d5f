import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, n, c, concentration=1.0):
    """Dirichlet predictions with labels drawn from a random perturbation of them."""
    x = rng.dirichlet(np.full(c, concentration), size=n)
    x = np.maximum(x, 1e-9)
    x /= x.sum(axis=1, keepdims=True)
    y = np.array([rng.choice(c, p=row) for row in x])
    return x, y


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call ``criterion(number, ok, detail)`` once; a test that errors before
    recording is logged as a failure, numbered from its ``test_cNN_`` name.
    """
    key = request.node.name

    def record(number, ok, detail):
        ACCEPTANCE_LINES[key] = (number, bool(ok), detail)
        assert ok, detail

    yield record
    if key not in ACCEPTANCE_LINES:
        digits = key[len("test_c"):len("test_c") + 2]
        number = int(digits) if digits.isdigit() else 0
        ACCEPTANCE_LINES[key] = (number, False, "raised before a verdict")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key, (number, ok, detail) in sorted(ACCEPTANCE_LINES.items(), key=lambda kv: kv[1][0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {key}: {detail}")
