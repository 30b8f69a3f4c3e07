"""Build script for the optional compiled kernel module.

The package works without it: ``hetgnn.backend`` falls back to numpy
implementations when ``hetgnn._core`` cannot be imported.
"""
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"compiled kernels not built, using numpy fallback: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"failed to build {ext.name}, using numpy fallback: {exc}")


extensions = []
if cythonize is not None:
    extensions = cythonize(
        [Extension("hetgnn._core", ["src/hetgnn/_core.pyx"], extra_compile_args=["-O3", "-ffp-contract=off"])],
        language_level="3",
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
