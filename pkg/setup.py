"""Build script for the optional compiled kernel.

The package works without the extension: streamvq.kernels falls back to a
pure-numpy implementation when streamvq._kernels is missing.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "streamvq._kernels",
                ["src/streamvq/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
