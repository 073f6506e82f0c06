"""Build script for the optional compiled stencil kernels.

The package works without the extension; ``phcm.kernels`` falls back to
numpy implementations when ``phcm._ckernels`` cannot be imported.
"""
import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "phcm._ckernels",
        ["src/phcm/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
