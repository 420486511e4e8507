"""Kernel backend selection.

The tape calls every dense primitive through ``kernels.backend``. At import
time the compiled extension (:mod:`cobex.kernels._native`) is preferred; the
numpy implementation is the fallback. ``COBEX_BACKEND=numpy|native`` forces a
choice, and :func:`use_backend` switches at runtime (used by the backend
benchmark and parity tests).
"""

import os

from cobex.errors import ConfigError
from cobex.kernels import _numpy


def _import_native():
    try:
        from cobex.kernels import _native
    except ImportError:
        return None
    return _native


def _select_initial():
    choice = os.environ.get("COBEX_BACKEND", "").strip().lower()
    if choice in ("", "native"):
        native = _import_native()
        if native is not None:
            return native
        if choice == "native":
            raise ConfigError(
                "COBEX_BACKEND=native but the compiled extension is not built"
            )
        return _numpy
    if choice == "numpy":
        return _numpy
    raise ConfigError(f"unknown COBEX_BACKEND value: {choice!r}")


backend = _select_initial()


def backend_name():
    return backend.NAME


def available_backends():
    names = ["numpy"]
    if _import_native() is not None:
        names.insert(0, "native")
    return names


def use_backend(name):
    """Switch the active backend; returns the previous backend's name."""
    global backend
    previous = backend.NAME
    if name == "numpy":
        backend = _numpy
    elif name == "native":
        native = _import_native()
        if native is None:
            raise ConfigError("native kernel backend is not built")
        backend = native
    else:
        raise ConfigError(f"unknown kernel backend: {name!r}")
    return previous
