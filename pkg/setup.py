import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: the compiled kernels must round exactly like the numpy
# fallback (no fused multiply-add), otherwise the two paths drift apart.
extensions = [
    Extension(
        "excursion._kernels",
        ["src/excursion/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

if os.environ.get("EXCURSION_NO_EXT"):
    extensions = []

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
