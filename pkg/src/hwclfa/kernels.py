"""Kernel backend selection.

The compiled extension is used when importable; ``HWCLFA_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("HWCLFA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py

stamp_discs = _impl.stamp_discs
dwconv1d_forward = _impl.dwconv1d_forward
dwconv1d_backward = _impl.dwconv1d_backward

__all__ = ["BACKEND", "stamp_discs", "dwconv1d_forward", "dwconv1d_backward"]
