import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("AMIDLAB_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # build without the compiled core; runtime falls back to numpy
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "amidlab._ckernels",
                    ["src/amidlab/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )

setup(ext_modules=ext_modules)
