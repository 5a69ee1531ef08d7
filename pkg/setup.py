"""Build hook for the optional compiled Merkle kernels.

The package is fully functional without the extension: deltamoney._kernels
falls back to a pure-Python implementation at import time. The extension is
attempted here and skipped (with a warning) if Cython or a C toolchain is
missing, so `pip install` never fails on that account.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Tolerate a failed extension build; the pure-Python path takes over."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing, compiler error, ...
            print(f"warning: skipping compiled kernels ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(
                f"warning: could not build {ext.name} ({exc}); "
                "using pure-Python kernels",
                file=sys.stderr,
            )


def extensions():
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "deltamoney._kernels._merkle_cy",
                ["src/deltamoney/_kernels/_merkle_cy.pyx"],
                libraries=["crypto"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
