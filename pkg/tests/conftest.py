import gmpy2
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _fresh_context():
    """Each test starts from the same 128-bit ambient context."""
    with gmpy2.context(gmpy2.context(), precision=128):
        yield


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical experiment")
