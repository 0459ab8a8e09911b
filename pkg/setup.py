import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tubempc.qp._ascore",
                ["src/tubempc/qp/_ascore.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython available: the package falls back to the pure-Python kernel
    # selected at import time in tubempc.qp.backend.
    ext_modules = []

setup(ext_modules=ext_modules)
