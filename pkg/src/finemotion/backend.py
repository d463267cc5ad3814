"""Kernel backend selection.

FINEMOTION_BACKEND picks the implementation of the hot kernels:
  numpy - vectorized numpy/BLAS path
  numba - jitted loop kernels
  auto  - default; convolution stays on the BLAS path (it is matmul-bound
          and BLAS wins on this machine class), pooling uses numba when
          importable. See benchmarks/bench_kernels.py for the comparison.

The choice is re-read from the environment on every dispatch, so tests and
callers can switch backends without reimporting.
"""

import os
import types

from . import kernels_numpy

try:
    from . import kernels_numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    kernels_numba = None
    _HAVE_NUMBA = False


def get_kernels():
    """Kernel namespace (conv2d/maxpool forward+backward) for the current
    FINEMOTION_BACKEND setting."""
    choice = os.environ.get("FINEMOTION_BACKEND", "auto").lower()
    if choice not in ("auto", "numpy", "numba"):
        raise ValueError(
            f"FINEMOTION_BACKEND must be auto/numpy/numba, got {choice!r}")
    if choice == "numba" and not _HAVE_NUMBA:
        raise ImportError("FINEMOTION_BACKEND=numba but numba is not importable")
    if choice == "numba":
        conv, pool = kernels_numba, kernels_numba
    elif choice == "numpy" or not _HAVE_NUMBA:
        conv, pool = kernels_numpy, kernels_numpy
    else:  # auto
        conv, pool = kernels_numpy, kernels_numba
    return types.SimpleNamespace(
        conv2d_forward=conv.conv2d_forward,
        conv2d_backward=conv.conv2d_backward,
        maxpool_forward=pool.maxpool_forward,
        maxpool_backward=pool.maxpool_backward)


def active_backend():
    choice = os.environ.get("FINEMOTION_BACKEND", "auto").lower()
    if choice != "auto":
        return choice
    return "auto" if _HAVE_NUMBA else "numpy"


def conv2d_forward(x, w, b):
    return get_kernels().conv2d_forward(x, w, b)


def conv2d_backward(x, w, gout):
    return get_kernels().conv2d_backward(x, w, gout)


def maxpool_forward(x, window):
    return get_kernels().maxpool_forward(x, window)


def maxpool_backward(x_shape, arg, gout, window):
    return get_kernels().maxpool_backward(x_shape, arg, gout, window)
