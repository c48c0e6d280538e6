import numpy as np
import pytest

from flowvi import kernels

BACKENDS = kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Every kernel backend that is importable here."""
    return BACKENDS[request.param]


@pytest.fixture
def tmp_output(tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWVI_OUTPUT", str(tmp_path / "results"))
    return tmp_path / "results"


def assert_close(a, b, rtol=0.0, atol=0.0):
    np.testing.assert_allclose(a, b, rtol=rtol, atol=atol)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
