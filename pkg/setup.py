from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; mpglab falls back to _core_py
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mpglab._core",
                ["src/mpglab/_core.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
