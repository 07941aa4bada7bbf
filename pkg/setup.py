"""Build the optional compiled tree kernels.

The package imports a pure-Python fallback when the extension is missing,
so a failed or skipped compile never breaks installation.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FAULTPIPE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "faultpipe._kernels",
                    ["src/faultpipe/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
