import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The extension is optional: sgds falls back to the pure-NumPy kernels when
# the compiled module is absent (see sgds/nnkit/kernels.py).
extensions = [
    Extension(
        "sgds.nnkit._kernels",
        ["src/sgds/nnkit/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -ffp-contract=off keeps the C loops at plain IEEE double semantics,
        # so results do not depend on FMA availability.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(
    ext_modules=(
        cythonize(extensions, compiler_directives={"language_level": "3"})
        if cythonize is not None
        else []
    ),
)
