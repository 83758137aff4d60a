"""Build script for the optional compiled kernel extension.

The package works without the extension (predstat.kernels falls back to the
NumPy implementation), so a failed compile downgrades to a pure-Python
install instead of aborting.
"""
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            print(f"WARNING: compiled kernels skipped ({exc}); "
                  "falling back to pure-NumPy kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: building {ext.name} failed ({exc}); "
                  "falling back to pure-NumPy kernels")


def make_extensions():
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "predstat.kernels._speedups",
        ["src/predstat/kernels/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


try:
    ext_modules = make_extensions()
except Exception as exc:  # Cython or numpy unavailable at build time
    print(f"WARNING: Cython unavailable ({exc}); building pure-Python package")
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
