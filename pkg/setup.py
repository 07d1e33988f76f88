"""Build script: compiles the optional fused-kernel extension.

The package works without the extension (pure-numpy kernels are selected at
import time), so any failure here degrades to a source-only install instead
of aborting.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("GAFLAB_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "gaflab._kernels",
                    ["src/gaflab/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError as exc:
        print(f"gaflab: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
