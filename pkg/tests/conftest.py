import numpy as np
import pytest

from proxyseg import backend as backend_mod

from bundle_factory import build_bundle


def _available_backends():
    names = ["numpy"]
    if backend_mod.HAS_NUMBA:
        names.append("numba")
    return names


@pytest.fixture(params=_available_backends())
def backend(request):
    """Runs the test once per kernel backend, restoring the default after."""
    prev = backend_mod.get_backend()
    backend_mod.set_backend(request.param)
    yield request.param
    backend_mod.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.RandomState(1234)


@pytest.fixture
def bundle_factory():
    return build_bundle
