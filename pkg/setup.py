import os

from setuptools import setup

ext_modules = []
if os.environ.get("STIMSEQ_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "stimseq.kernels._conv_cy",
                    ["src/stimseq/kernels/_conv_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython available: the package still works on the numpy backend.
        ext_modules = []

setup(ext_modules=ext_modules)
