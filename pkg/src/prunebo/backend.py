"""Selects the compiled kernel extension or its pure-NumPy fallback.

Import order: the Cython extension ``prunebo._kernels`` if it was built,
otherwise :mod:`prunebo._kernels_py`. Setting the environment variable
``PRUNEBO_PURE=1`` forces the fallback, which is useful for benchmarking
and for debugging the compiled path.
"""

import os

from . import _kernels_py

if os.environ.get("PRUNEBO_PURE"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

SOBOL_BITS = _kernels_py.SOBOL_BITS

sobol_fill = _impl.sobol_fill
ard_sqdist = _impl.ard_sqdist
ei_values = _impl.ei_values
