"""Kernel backend selection.

The compiled extension is preferred; the pure-Python twin is used when it is
missing or when ``DRCC_OPF_PURE_PYTHON`` is set to a truthy value.
"""

import os

from . import _kernels_py

_force_py = os.environ.get("DRCC_OPF_PURE_PYTHON", "").lower() in ("1", "true", "yes")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

etree = _impl.etree
ldl_factor = _impl.ldl_factor
ldl_solve = _impl.ldl_solve
radial_sweep = _impl.radial_sweep


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
