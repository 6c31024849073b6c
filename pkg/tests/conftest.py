import numpy as np
import pytest

from mnariv.data import Dataset
from mnariv.model import (BaselineMissingnessSpec, CompleteCaseOutcomeSpec, Design, IvDensitySpec,
                          ModelConfig, SelectionBiasSpec)


def make_config(zeta=0.0, omega=(0.0,), theta=(0.0,), xi=(0.0,), baseline="1", outcome="1",
                iv="1", instruments=("z",)):
    return ModelConfig(
        SelectionBiasSpec(zeta),
        BaselineMissingnessSpec(Design.parse(baseline), np.asarray(omega, float)),
        CompleteCaseOutcomeSpec(Design.parse(outcome), np.asarray(theta, float)),
        IvDensitySpec(instruments, tuple(Design.parse(iv) for _ in instruments), np.asarray(xi, float)),
    )


def random_binary_dataset(rng, n, p=1, r_prob=0.7):
    """Binary x, z, y with some missing outcomes (at least one of each r)."""
    while True:
        x = (rng.random((n, p)) < 0.5).astype(float)
        z = (rng.random(n) < 0.5).astype(float)
        y = (rng.random(n) < 0.5).astype(float)
        r = (rng.random(n) < r_prob).astype(int)
        if 0 < r.sum() < n:
            return Dataset(x, z, r, np.where(r == 1, y, np.nan))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
