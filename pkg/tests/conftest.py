import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from decomp_lab.finitedist import SymbolSpace, new_distribution

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def weights(n, min_value=0.0):
    """Nonnegative weight vectors of length n with positive total."""
    return st.lists(st.floats(min_value=min_value, max_value=1.0, allow_nan=False), min_size=n, max_size=n).filter(
        lambda w: sum(w) > 1e-6)


@st.composite
def distributions(draw, n=None, max_n=12, space=None):
    if space is None:
        n = n or draw(st.integers(1, max_n))
        space = SymbolSpace.integers(n)
    w = draw(weights(len(space)))
    return new_distribution(space, w)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
