"""Build script for the optional compiled kernel backend.

The package is pure Python plus one Cython extension holding the hot
denoiser kernels (transformer forward pass and fused loss/gradient).
If Cython or a C compiler is unavailable the extension is skipped and
the package falls back to the numpy kernels at import time.
"""

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "mdmkit.nn._kernels_cy",
        sources=["src/mdmkit/nn/_kernels_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -march=native: the extension is built from source on the machine
        # that runs it, so tune for that machine's vector units.
        # -ffast-math: the kernels hold no NaN/Inf logic (divergence checks
        # live in Python on the returned arrays) and both backends are pinned
        # together by tolerance tests, so reassociation is safe here.
        extra_compile_args=["-O3", "-march=native", "-funroll-loops", "-ffast-math"],
        # -ffast-math lets GCC call glibc's vectorized math (libmvec).
        extra_link_args=["-lmvec", "-lm"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
