"""Build the optional Cython kernels; the package falls back to NumPy without them."""
import os

from setuptools import setup

# -ffast-math lets gcc vectorize exp through glibc's libmvec
_FLAGS = ["-O3", "-ffast-math"]
if os.environ.get("BLURKP_PORTABLE") != "1":
    _FLAGS.append("-march=native")

ext_modules = []
if os.environ.get("BLURKP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "blurkp._ckernels",
                    [os.path.join("src", "blurkp", "_ckernels.pyx")],
                    include_dirs=[np.get_include()],
                    extra_compile_args=_FLAGS,
                    libraries=["mvec", "m"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
