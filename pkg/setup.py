from setuptools import setup

# The compiled kernels are optional: without Cython (or a C compiler) the
# package installs anyway and falls back to the pure-Python implementations.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/fedleak/_kernels/_speedups.pyx"],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
