import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from epel import models, posterior

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def linreg2_target():
    return posterior.Target(models.linreg_model(2), models.generate("linreg2", 0))


@pytest.fixture(scope="session")
def linreg2_laplace(linreg2_target):
    return posterior.map_newton(linreg2_target)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def linreg2_gold(linreg2_target):
    from epel import samplers
    return samplers.mh_run(linreg2_target, samplers.ChainConfig(draws=200_000, seed=99))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
