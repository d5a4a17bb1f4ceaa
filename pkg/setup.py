import os
import platform

import numpy as np
from setuptools import Extension, setup



def _compile_args():
    args = ["-O3", "-fno-trapping-math"]
    # AVX2+FMA lets gcc vectorize the polynomial exp in include/lstm_ops.h
    if platform.machine() in ("x86_64", "AMD64") and os.environ.get("STEPCAST_PORTABLE") != "1":
        try:
            with open("/proc/cpuinfo") as fh:
                flags = fh.read()
        except OSError:
            flags = ""
        if " avx2" in flags and " fma" in flags:
            args += ["-mavx2", "-mfma"]
    return args


extensions = []
if os.environ.get("STEPCAST_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install; stepcast.kernels falls back to numpy
        pass
    else:
        extensions = cythonize(
            [
                Extension(
                    "stepcast._core",
                    ["src/stepcast/_core.pyx"],
                    include_dirs=[np.get_include(), "src/stepcast/include"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=_compile_args(),
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=extensions)
