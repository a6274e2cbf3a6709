import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the numpy conv path is used
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("PYRPIX_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "pyrpix.tensor._convcore",
                ["src/pyrpix/tensor/_convcore.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp", "-march=native", "-fno-math-errno"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
