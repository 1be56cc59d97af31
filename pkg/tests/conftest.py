import numpy as np
import pytest

from lesa import _kernels
from lesa._kernels import _pybspline

try:
    from lesa._kernels import _cbspline
except ImportError:  # extension not built
    _cbspline = None

BACKENDS = {"python": _pybspline}
if _cbspline is not None:
    BACKENDS["cython"] = _cbspline


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Route every spline evaluation through one kernel backend."""
    mod = BACKENDS[request.param]
    monkeypatch.setattr(_kernels, "basis", mod.basis)
    monkeypatch.setattr(_kernels, "basis_and_deriv", mod.basis_and_deriv)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel_err(analytic, numeric, floor=1e-4):
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
