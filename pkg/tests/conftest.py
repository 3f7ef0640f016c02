import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_nonsingular_q(rng, n=1, min_sv=1e-2):
    """Joint vectors whose tip Jacobian is comfortably full rank."""
    from scrapelab.arm import tip_jacobian
    lengths = np.array([0.30, 0.30, 0.25, 0.15])
    out = []
    while len(out) < n:
        q = rng.uniform(-np.pi, np.pi, 4)
        if np.linalg.svd(tip_jacobian(lengths, q), compute_uv=False)[-1] > min_sv:
            out.append(q)
    return out


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records one acceptance line and asserts ``ok``."""
    def record(n, title, ok, detail):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
