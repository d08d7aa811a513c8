"""Build script.

The compiled row-operation kernels are optional: if Cython or a C compiler
is unavailable the package installs anyway and falls back to the numpy
implementation at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/projdiff/_ops_cython.pyx",
        compiler_directives={"language_level": 3},
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.extra_compile_args = ["-O3"]
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
