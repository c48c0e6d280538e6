"""Build the optional compiled kernel.

The package works without it: ``flowvi.kernels`` falls back to the numpy
implementation when ``flowvi._ckernels`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("FLOWVI_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        compile_args = [
            "-O3",
            # lets rint/fabs/copysign in _vmath.h vectorize; no fast-math,
            # so NaN/inf semantics and summation order are untouched
            "-fno-math-errno",
            "-fno-trapping-math",
        ]
        if os.environ.get("FLOWVI_PORTABLE") != "1":
            compile_args.append("-march=native")
        ext_modules = cythonize(
            [
                Extension(
                    "flowvi._ckernels",
                    ["src/flowvi/_ckernels.pyx"],
                    include_dirs=[np.get_include(), "src/flowvi"],
                    extra_compile_args=compile_args,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
