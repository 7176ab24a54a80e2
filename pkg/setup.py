"""Build hook for the optional compiled kernel extension.

The package is fully functional without the extension: ibex.kernels falls
back to the numpy implementations when `ibex.kernels._core` is absent, so
the Extension is marked optional and a failed compile never blocks install.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "ibex.kernels._core",
        ["src/ibex/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, language_level=3) if cythonize else [])
