import numpy as np
import pytest

from gts.hierarchy import aggregate_panel, build_hierarchy

SEXES = ["F", "M"]
REGIONS = [f"R{i}" for i in range(1, 9)]


def random_panel(rng, n_a=2, n_b=8, n=30, years=None):
    """Random coherent panel with ``n_a x n_b`` bottom series."""
    h = build_hierarchy({"a": [f"a{i}" for i in range(n_a)], "b": [f"b{j}" for j in range(n_b)]})
    E = rng.uniform(500, 5000, (h.m_bottom, n))
    D = rng.poisson(E * rng.uniform(0.005, 0.05, (h.m_bottom, 1)))
    return aggregate_panel(h, D, E, years)


def ar1(rng, n, phi, sigma=1.0, burn=100):
    e = rng.normal(0.0, sigma, n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return x[burn:]


@pytest.fixture
def aus_hierarchy():
    return build_hierarchy({"sex": SEXES, "region": REGIONS})


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA: dict[int, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    if report.when == "call" or report.skipped:
        _CRITERIA[number] = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    elif report.failed:
        _CRITERIA[number] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number}: {_CRITERIA[number]}")
