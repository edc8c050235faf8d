"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; set
``MPG_LAB_BACKEND=python`` to force the numpy fallback.
"""

import os

from mpglab import _core_py


def load(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for auto)."""
    if name is None:
        name = os.environ.get("MPG_LAB_BACKEND", "auto").lower()
    if name == "python":
        return _core_py
    try:
        from mpglab import _core
    except ImportError:
        if name == "compiled":
            raise
        return _core_py
    return _core


kernels = load()
BACKEND = "python" if kernels is _core_py else "compiled"
