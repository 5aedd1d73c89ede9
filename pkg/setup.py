import os

from setuptools import setup

ext_modules = []
if os.environ.get("DRCRL_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "drcrl._kernels",
                    ["src/drcrl/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math: the beta = 0 path must stay bit-identical
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
