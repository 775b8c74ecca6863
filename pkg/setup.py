from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "darma._kernels._core",
        ["src/darma/_kernels/_core.pyx"],
        extra_compile_args=["-O3"],
        optional=True,  # pure-python kernels take over if the build fails
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
