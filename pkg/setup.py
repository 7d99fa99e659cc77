"""Builds the optional Cython nearest-neighbor kernel.

The package works without it (a NumPy fallback is selected at import time),
so the extension is skipped when Cython is unavailable.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "meshtok._kernels._nn_cy",
                ["src/meshtok/_kernels/_nn_cy.pyx"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
