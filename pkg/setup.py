import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sympconj.kernels._core",
                ["src/sympconj/kernels/_core.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-Python fallback in sympconj.kernels is used when the
    # compiled extension is unavailable.
    ext_modules = []

setup(ext_modules=ext_modules)
