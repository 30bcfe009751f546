"""Build script for the compiled DP kernels (CTC forward-backward, DTW).

The extension is optional: if Cython or a C compiler is unavailable the
package falls back to the pure-NumPy kernels in peftlab._pykernels.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "peftlab._ckernels",
                ["src/peftlab/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
