"""Build the optional Cython jet kernels.

Without Cython (or a C compiler) the package installs as pure Python and
falls back to the numpy kernels in ``finhol._kernels_py``.
"""
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("finhol._kernels", ["src/finhol/_kernels.pyx"], extra_compile_args=["-O3"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
