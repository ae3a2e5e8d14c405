"""Backend selection for the hot kernels.

The compiled extension ``koopcast._ckernels`` is used when importable;
otherwise, or when ``KOOPCAST_PURE_PYTHON=1`` is set, the numpy
implementations in ``koopcast._pykernels`` are used.
"""
import os

from . import _pykernels

python_backend = _pykernels

try:
    from . import _ckernels as cython_backend
except ImportError:  # extension not built
    cython_backend = None

if cython_backend is not None and os.environ.get("KOOPCAST_PURE_PYTHON", "") in ("", "0"):
    _impl = cython_backend
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

# Batched linear rollout is a GEMM; BLAS beats the compiled loop above a few rows.
LINEAR_BATCH_THRESHOLD = 4


def rollout_linear(K, Z0, P):
    """``out[i, l] = K^(l+1) Z0[i]``; batches go through numpy matmul."""
    rows = 1 if getattr(Z0, "ndim", 2) < 2 else len(Z0)
    if rows >= LINEAR_BATCH_THRESHOLD:
        return _pykernels.rollout_linear(K, Z0, P)
    return _impl.rollout_linear(K, Z0, P)


rollout_relift = _impl.rollout_relift
displacement_errors = _impl.displacement_errors


def available_backends() -> dict:
    out = {"python": _pykernels}
    if cython_backend is not None:
        out["cython"] = cython_backend
    return out
