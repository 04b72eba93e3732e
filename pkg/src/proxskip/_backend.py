"""Backend selection for the hot numeric kernels.

All solver inner loops are written once, in numba-compatible numpy style.
By default they are compiled with ``numba.njit``; setting the environment
variable ``PROXSKIP_BACKEND=numpy`` (before import) keeps them as plain
numpy functions instead.  ``benchmarks/bench_backends.py`` compares the two.
"""

import os

_requested = os.environ.get("PROXSKIP_BACKEND", "numba").strip().lower()

if _requested not in ("numba", "numpy"):
    raise RuntimeError(
        f"PROXSKIP_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

USING_NUMBA = False
if _requested == "numba":
    try:
        import numba  # noqa: F401

        USING_NUMBA = True
    except ImportError:
        USING_NUMBA = False


def kernel(func):
    """Decorate a hot loop: njit-compile it, or leave it as pure numpy."""
    if USING_NUMBA:
        import numba

        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_name():
    return "numba" if USING_NUMBA else "numpy"
