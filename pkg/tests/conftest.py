import numpy as np
import pytest

from lrpolicy.simlab import PRESETS, draw_sample

# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split(".")[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_sample():
    return draw_sample(PRESETS["reference"], 400, rep=3)


@pytest.fixture(scope="session")
def shifted_sample():
    return draw_sample(PRESETS["reference_shifted"], 400, rep=4)
