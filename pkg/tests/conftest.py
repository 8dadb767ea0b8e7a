import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from finsler import connections as C
from finsler import metrics as M
from oracles import RANDERS_A, RANDERS_B

settings.register_profile(
    "finsler",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)
settings.load_profile("finsler")


def randers_metric():
    return M.randers(RANDERS_A, RANDERS_B)


def admissible_samples(metric, count, seed, xbox=0.5, vbox=1.0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        x = rng.uniform(-xbox, xbox, metric.dim)
        v = rng.uniform(-vbox, vbox, metric.dim)
        if metric.in_cone(x, v) and np.linalg.norm(v) > 0.2:
            out.append((x, v, rng.uniform(-vbox, vbox, metric.dim)))
    return out


def points(n=2, bound=0.5):
    return st.lists(st.floats(-bound, bound), min_size=n, max_size=n).map(np.array)


def directions(n=2):
    return (st.lists(st.floats(-1.0, 1.0), min_size=n, max_size=n)
            .map(np.array).filter(lambda v: np.linalg.norm(v) > 0.2))


@pytest.fixture(scope="session")
def randers():
    return randers_metric()


@pytest.fixture(scope="session")
def sphere():
    return M.riemannian_sphere(1.0, 2)


@pytest.fixture(scope="session")
def randers_connections(randers):
    return {
        "chern": C.chern(randers),
        "berwald": C.berwald(randers),
        "distinguished": C.distinguished(randers, C.QSpec(1.0, 0.5)),
    }


@pytest.fixture(scope="session")
def sample():
    return np.array([0.3, -0.2]), np.array([0.7, 0.4])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
