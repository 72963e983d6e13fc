"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a NumPy fallback is
selected at import time); building it just makes the training and SVD hot
loops faster.  `DIACHRON_NO_EXT=1 pip install .` skips the extension.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("DIACHRON_NO_EXT"):
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "diachron._kernels._core",
                ["src/diachron/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
