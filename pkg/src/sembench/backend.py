"""Kernel backend selection: numba-jitted loops or pure numpy.

The hot inner loops (layer norm, masked softmax, GELU) exist in two
implementations with identical semantics. The active one is chosen at import
time from the SEMBENCH_BACKEND environment variable ("numba" or "numpy");
unset means numba when importable, numpy otherwise. `set_backend` /
`backend()` switch at runtime, which the parity tests and the benchmark use.
"""

from __future__ import annotations

import os
import warnings
from contextlib import contextmanager

from .errors import ConfigError

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

ENV_VAR = "SEMBENCH_BACKEND"
BACKENDS = ("numba", "numpy")


def _initial_backend() -> str:
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if HAS_NUMBA:
            return "numba"
        warnings.warn(f"{ENV_VAR}=numba but numba is not installed; using numpy")
        return "numpy"
    if requested:
        warnings.warn(f"ignoring unknown {ENV_VAR}={requested!r}")
    return "numba" if HAS_NUMBA else "numpy"


_active = _initial_backend()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ConfigError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    if name == "numba" and not HAS_NUMBA:
        raise ConfigError("numba backend requested but numba is not installed")
    _active = name


@contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend."""
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
