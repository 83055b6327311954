import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gsnorm.cube import TimeSeriesCube

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_cube(rng, bands=3, T=5, R=8, C=8, nan_frac=0.0, year=2018):
    data = rng.normal(size=(bands, T, R, C)).astype(np.float32)
    if nan_frac:
        data[rng.random(data.shape) < nan_frac] = np.nan
    doys = np.sort(rng.choice(np.arange(1, 367), size=T, replace=False))
    return TimeSeriesCube([f"B{i}" for i in range(bands)], doys, year, data)


def bits(a):
    return np.ascontiguousarray(a, dtype=np.float32).view(np.uint32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def report(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
