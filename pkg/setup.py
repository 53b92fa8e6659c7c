"""Build script for the optional Cython kernels.

The package imports and runs without the extension; ``wbsac.kernels`` falls
back to the numpy implementation when ``wbsac._kernels`` is missing.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pragma: no cover - build without a compiler toolchain
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "wbsac._kernels",
                ["src/wbsac/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives=dict(
            language_level="3",
            boundscheck=False,
            wraparound=False,
            cdivision=True,
            initializedcheck=False,
        ),
    )

setup(ext_modules=ext_modules)
