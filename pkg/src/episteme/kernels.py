"""Backend selection for the dense MLP kernels.

The compiled extension is used when it imports; otherwise the numpy reference
is used. Set ``EPISTEME_KERNELS=python`` to force the fallback.
"""

import importlib
import os

BACKENDS = ("cython", "python")


def load_backend(name):
    if name == "cython":
        return importlib.import_module("episteme._kernels")
    if name == "python":
        return importlib.import_module("episteme._kernels_py")
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")


def available_backends():
    names = []
    for name in BACKENDS:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    requested = os.environ.get("EPISTEME_KERNELS", "").strip().lower()
    if requested:
        return load_backend(requested)
    try:
        return load_backend("cython")
    except ImportError:
        return load_backend("python")


_impl = _select()
BACKEND = _impl.NAME
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
