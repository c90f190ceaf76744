"""Build script for the optional compiled stepping core.

The package is fully functional without the extension: idode.backend falls
back to the pure numpy kernels if ``idode._ckernels`` is missing, so any
failure to compile downgrades the install instead of breaking it.
"""

import warnings

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Swallow compiler failures; the import-time fallback takes over."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            warnings.warn(f"compiled core skipped ({exc}); using pure-python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"compiled core skipped ({exc}); using pure-python kernels")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "idode._ckernels",
        sources=["src/idode/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps the C arithmetic bit-compatible with the
        # numpy fallback (no FMA contraction); do not add -ffast-math.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
