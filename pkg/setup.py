"""Build script: compiles the rasterizer hot loops as a C extension.

The extension is optional. If Cython or a C compiler is unavailable the
package installs pure-Python; dynsplat._kernels falls back to the numpy
backend at import time.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                name="dynsplat._kernels._rasterize",
                sources=["src/dynsplat/_kernels/_rasterize.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
else:
    extensions = []

setup(ext_modules=extensions)
