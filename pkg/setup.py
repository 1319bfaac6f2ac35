import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # fall back to the pure-numpy kernels
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("COMPOLAYOUT_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "compolayout._kernels",
                ["src/compolayout/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no contraction into FMA: keeps splat coverage bit-identical to numpy
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
