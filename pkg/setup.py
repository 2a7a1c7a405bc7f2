import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "highmpc._core._kernels",
                ["src/highmpc/_core/_kernels.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python kernels are used when the extension cannot be built.
    ext_modules = []

setup(ext_modules=ext_modules)
