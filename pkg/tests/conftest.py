import numpy as np
import pytest

from hwclfa import _kernels_py, kernels
from hwclfa.backbone import init_frozen

BACKENDS = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "python":
        for name in ("stamp_discs", "dwconv1d_forward", "dwconv1d_backward"):
            monkeypatch.setattr(kernels, name, getattr(_kernels_py, name))
    return request.param


@pytest.fixture(scope="session")
def desk_backbone():
    return init_frozen(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "VERDICTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
