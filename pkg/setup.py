"""Build script for the optional compiled histogram kernels.

The package works without the extension (a numpy fallback is selected at
import time), so the build is marked optional: a missing compiler degrades
to the pure-Python kernels instead of failing the install.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "gpuforecast.gbdt._hist_cy",
                ["src/gpuforecast/gbdt/_hist_cy.pyx"],
                # -ffp-contract=off keeps the compiled kernels bit-identical
                # to the numpy fallback (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
