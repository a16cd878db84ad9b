"""Build script: compiles the optional fast-kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile only costs speed, never functionality.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class _OptionalBuildExt(build_ext):
    """Swallow compiler failures and fall back to the pure-NumPy kernels."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            warnings.warn(f"fast-kernel extension not built ({exc}); "
                          "easel will use the NumPy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"building {ext.name} failed ({exc}); "
                          "easel will use the NumPy fallback")


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "easel._fastkernels",
        ["src/easel/_fastkernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions(), cmdclass={"build_ext": _OptionalBuildExt})
