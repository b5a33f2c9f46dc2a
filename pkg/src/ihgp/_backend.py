"""Selects the compiled kernels when available, the numpy versions otherwise.

Set ``IHGP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pycore

BACKEND = "python"
kernels = _pycore

if os.environ.get("IHGP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        kernels = _core


def get(name=None):
    """Return the kernel module for ``name`` ('compiled' or 'python'), default active."""
    if name is None:
        return kernels
    if name == "python":
        return _pycore
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
