import pytest
from hypothesis import HealthCheck, settings

from cknlab.cylinder import make_grid, make_params

settings.register_profile(
    "cknlab", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("cknlab")


@pytest.fixture(scope="session")
def p32():
    return make_params(3, 2.0)


@pytest.fixture(scope="session")
def grid32(p32):
    return make_grid(p32, [0.0])


@pytest.fixture(scope="session")
def small_grid(p32):
    """Coarse grid for property tests that build many random fields."""
    return make_grid(p32, [0.0], n_t=1025, max_mode=4)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
