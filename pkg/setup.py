"""Build the optional compiled sweep kernel.

The package works without it: ``mayer_sens.hjb`` falls back to the numpy
implementation when the extension cannot be imported.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("MAYER_SENS_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "mayer_sens.hjb._sweep",
                    ["src/mayer_sens/hjb/_sweep.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
