"""Build script for the optional compiled convolution kernels.

The package is pure Python except for one Cython extension holding the
convolution hot loops.  If the extension cannot be compiled (no compiler,
no Cython), installation still succeeds and the package falls back to the
NumPy kernels at import time.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; degrade to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: compiled kernels skipped ({exc}); "
                  "falling back to NumPy kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to NumPy kernels")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - toolchain dependent
        return []
    ext = Extension(
        "spikeadapt.kernels._convext",
        ["src/spikeadapt/kernels/_convext.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
