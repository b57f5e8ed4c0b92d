import numpy as np
import pytest

from polarocta.tensor import set_debug_checks


@pytest.fixture(autouse=True)
def _finite_guards():
    set_debug_checks(True)
    yield
    set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
