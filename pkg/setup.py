"""Build script for the optional compiled kernel extension.

The package works without the extension (pure numpy fallbacks are selected at
import time); building it just makes the hot loops faster. Cython and numpy
must be importable at build time, so install with
``pip install -e . --no-build-isolation``.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "rasm._native",
                ["src/rasm/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    print("Cython/numpy not available at build time; building without the "
          "compiled kernels (numpy fallbacks will be used).")

setup(ext_modules=ext_modules)
