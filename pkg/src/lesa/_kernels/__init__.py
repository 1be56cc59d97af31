"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``LESA_PURE_PYTHON=1`` is set, the numpy implementation is used.
"""
import os

if os.environ.get("LESA_PURE_PYTHON", "") not in ("", "0"):
    from ._pybspline import basis, basis_and_deriv
    BACKEND = "python"
else:
    try:
        from ._cbspline import basis, basis_and_deriv
        BACKEND = "cython"
    except ImportError:
        from ._pybspline import basis, basis_and_deriv
        BACKEND = "python"

__all__ = ["basis", "basis_and_deriv", "BACKEND"]
