"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so any failure here degrades to a pure-Python install. Set
PRUNEBO_NO_EXT=1 to skip the compile step explicitly.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PRUNEBO_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "prunebo._kernels",
                    ["src/prunebo/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"prunebo: skipping compiled kernels ({exc}); using pure-Python backend")

setup(ext_modules=ext_modules)
