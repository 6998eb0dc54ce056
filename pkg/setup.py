"""Build script for the optional compiled integrator core.

The package works without the extension (a numpy implementation is selected
at import time), so failures here should not block a pure-Python install:
build with ``pip install -e . --no-build-isolation``.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "diffbandit._kernels",
        ["src/diffbandit/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
