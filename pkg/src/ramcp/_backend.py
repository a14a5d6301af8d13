"""Kernel selection.

The compiled kernel is used when importable; set ``RAMCP_BACKEND=python`` to
force the pure-Python one.
"""
import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

KERNELS = {"python": _pykernel}
if _ckernel is not None:
    KERNELS["cython"] = _ckernel


def get_kernel(name=None):
    """Return a kernel module by name; ``None`` picks the default."""
    if name is None:
        name = os.environ.get("RAMCP_BACKEND") or ("cython" if _ckernel is not None else "python")
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; "
                         f"available: {sorted(KERNELS)}") from None


DEFAULT = get_kernel()
BACKEND = DEFAULT.BACKEND
