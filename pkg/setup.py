import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/txv/backend/_ckernels.pyx"], language_level=3
    )
except ImportError:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)
