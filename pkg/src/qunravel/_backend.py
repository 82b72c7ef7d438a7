"""Kernel selection.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``QUNRAVEL_BACKEND=python`` is set, the numpy fallback
is used.
"""
import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get_kernel(name=None):
    """Return ``(name, simulate_batch)`` for the requested backend."""
    if name is None:
        name = os.environ.get("QUNRAVEL_BACKEND", "compiled" if _compiled is not None else "python")
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel not available; build the extension "
                              "with `pip install -e . --no-build-isolation`")
        return "compiled", _compiled.simulate_batch
    if name == "python":
        return "python", _fallback.simulate_batch
    raise ValueError(f"unknown backend {name!r}")


BACKEND, simulate_batch = get_kernel()
