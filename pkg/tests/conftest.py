import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pyrpix.network import MultiscaleModel, make_config
from pyrpix.tensor import set_backend

settings.register_profile(
    "pyrpix", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pyrpix")

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(params=["compiled", "numpy"])
def backend(request):
    try:
        prev = set_backend(request.param)
    except ImportError:
        pytest.skip("compiled core not built")
    yield request.param
    import pyrpix.tensor.conv as conv

    conv._backend = prev


@pytest.fixture
def small_model():
    def make(base=(4, 4), target=(8, 8), channels=1, levels=4, seed=0, **kw):
        kw.setdefault("base_hidden", 8)
        kw.setdefault("up_hidden", 8)
        kw.setdefault("shallow_hidden", 8)
        return MultiscaleModel(make_config(base, target, channels, levels, **kw), seed)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
