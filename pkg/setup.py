"""Build script for the optional compiled rank-statistics kernel.

The package works without the extension: simvec.kendall_kernel falls back
to a pure-Python merge sort when simvec._kendall_c is not importable.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("simvec._kendall_c", ["src/simvec/_kendall_c.pyx"])],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
