"""Build script: compiles the negative binomial kernel extension when possible.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here downgrades to a pure-Python install
instead of aborting.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "hbsimex._kernels._nbloglik",
                ["src/hbsimex/_kernels/_nbloglik.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"hbsimex: building without compiled kernels ({exc})\n")

setup(ext_modules=ext_modules)
