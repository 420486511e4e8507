"""Build script: compiles the native kernel extension when Cython is available.

The package works without the extension (a numpy fallback is selected at
import time), so a failed extension build is not fatal for development
installs; `pip install -e . --no-build-isolation` with Cython present
produces the compiled core.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "cobex.kernels._native",
                ["src/cobex/kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
