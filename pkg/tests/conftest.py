import numpy as np
import pytest

from knotflow.geometry import generate_curve
from knotflow.variations import random_smooth_field

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def perturbed_curve(n, dim=3, seed=0, amplitude=0.02):
    """A unit-circumference circle plus a seeded smooth bump; embedded for small amplitudes."""
    rng = np.random.default_rng(seed)
    c = generate_curve("circle", n, dim)
    return c.with_nodes(c.nodes + amplitude * random_smooth_field(n, dim, rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
