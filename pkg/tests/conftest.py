import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from extmech.extnum import AlgebraContext

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def ctx():
    return AlgebraContext(z0=0.3 + 0.2j, w0=-0.7 + 0.1j)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record the verdict of one numbered acceptance criterion."""

    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        line = f"Criterion {number}: {'PASS' if passed else 'FAIL'}"
        print(line + (f"  ({detail})" if detail else ""))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"Criterion {n}: {'PASS' if ok else 'FAIL'}"
                                    + (f"  ({detail})" if detail else ""))
