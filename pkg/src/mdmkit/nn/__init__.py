"""Kernel backend selection.

Two interchangeable implementations of the denoiser kernels exist: a
compiled Cython extension (built at install time) and a pure numpy
fallback. Both expose the same two functions:

    forward_logprobs(params, tokens, cond_len, arch...) -> (target_len, V)
    masked_loss_grad(params, tokens, cond_len, arch..., targets, masked,
                     weight) -> (loss, grad)

The backend is chosen once at import: the extension when it is
importable, numpy otherwise. Set ``MDM_KERNEL_BACKEND`` to ``python``
or ``cython`` to force one (forcing ``cython`` without the built
extension is an import error, not a silent fallback).

Both backends compute the same math in float64; results agree to
roundoff but not bit-for-bit, since summation orders differ. Any
single run uses exactly one backend, so per-run determinism holds.
"""

import os

from . import kernels_py

__all__ = ["backend", "backend_name", "available_backends", "get_backend"]

_FORCED = os.environ.get("MDM_KERNEL_BACKEND", "auto").lower()

_cy = None
if _FORCED in ("auto", "cython"):
    try:
        from . import _kernels_cy as _cy
    except ImportError:
        _cy = None
        if _FORCED == "cython":
            raise ImportError(
                "MDM_KERNEL_BACKEND=cython but the compiled extension is not "
                "available; build it with `pip install -e .` or drop the override"
            )

if _FORCED == "python" or _cy is None:
    backend = kernels_py
    backend_name = "python"
else:
    backend = _cy
    backend_name = "cython"


def available_backends() -> tuple[str, ...]:
    """Names of the backends importable in this environment."""
    try:
        from . import _kernels_cy  # noqa: F401
    except ImportError:
        return ("python",)
    return ("python", "cython")


def get_backend(name: str):
    """Fetch a backend module by name (for benchmarks and cross-checks)."""
    if name == "python":
        return kernels_py
    if name == "cython":
        from . import _kernels_cy
        return _kernels_cy
    raise ValueError(f"unknown backend {name!r}")
