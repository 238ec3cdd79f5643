"""Kernel backend selection.

Two interchangeable kernel implementations exist: a numba-jitted one and a
pure-numpy one. The active backend is chosen once at import from the
PROXYSEG_BACKEND environment variable ("numba" or "numpy"; default is numba
when importable) and can be switched at runtime with set_backend(), which the
benchmark and the test suite use to exercise both paths.
"""

import os

from .errors import ConfigError

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_VALID = ("numba", "numpy")
_active = None


def _initial_backend() -> str:
    name = os.environ.get("PROXYSEG_BACKEND", "").strip().lower()
    if name:
        if name not in _VALID:
            raise ConfigError("PROXYSEG_BACKEND", f"unknown backend {name!r}, expected one of {_VALID}")
        if name == "numba" and not HAS_NUMBA:
            raise ConfigError("PROXYSEG_BACKEND", "numba requested but not importable")
        return name
    return "numba" if HAS_NUMBA else "numpy"


def get_backend() -> str:
    """Name of the currently active kernel backend."""
    global _active
    if _active is None:
        _active = _initial_backend()
    return _active


def set_backend(name: str) -> None:
    """Switch kernel implementations; raises ConfigError for bad names."""
    global _active
    if name not in _VALID:
        raise ConfigError("backend", f"unknown backend {name!r}, expected one of {_VALID}")
    if name == "numba" and not HAS_NUMBA:
        raise ConfigError("backend", "numba backend requested but numba is not importable")
    _active = name


def kernels_module():
    """The implementation module for the active backend."""
    if get_backend() == "numba":
        from . import _kernels_numba

        return _kernels_numba
    from . import _kernels_numpy

    return _kernels_numpy
