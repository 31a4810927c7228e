import pytest
from hypothesis import HealthCheck, settings

from cdnconvert.simulate import angular_like_asset, reference_bomb

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bomb():
    return reference_bomb()


@pytest.fixture(scope="session")
def text_asset():
    return angular_like_asset()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
