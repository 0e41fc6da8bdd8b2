import numpy as np
import pytest

from fkclone.model import registry_model
from fkclone.tilt import tilt


@pytest.fixture
def two_state():
    return registry_model("two_state")


@pytest.fixture
def skewed():
    # potential differs between the two states, so selection does something
    return registry_model("two_state", a=1.0, b=3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def all_registry_models():
    return [registry_model("two_state"), registry_model("two_state", a=0.3, b=2.0),
            registry_model("ring_current"), registry_model("ring_current", S=4, p=0.8, q=0.1),
            registry_model("birth_death")]


def tilted(name, k, **params):
    return tilt(registry_model(name, **params), k)


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_COUNT = 12


@pytest.fixture
def criterion():
    def record(num: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[num] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, ACCEPTANCE_COUNT + 1):
        if num in ACCEPTANCE:
            ok, detail = ACCEPTANCE[num]
            terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {num:2d}: NOT RUN")
