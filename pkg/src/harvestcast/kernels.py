"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is loaded. Set ``HARVESTCAST_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

logger = logging.getLogger(__name__)

_FORCE_PY = os.environ.get("HARVESTCAST_PURE_PYTHON", "").lower() in ("1", "true", "yes")

if _FORCE_PY:
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")
        from . import _kernels_py as _impl

        BACKEND = "python"

lstm_gates_forward = _impl.lstm_gates_forward
lstm_gates_backward = _impl.lstm_gates_backward
adam_update = _impl.adam_update
selu_forward = _impl.selu_forward
selu_backward = _impl.selu_backward
sample_points = _impl.sample_points


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"`` (for tests and benchmarks)."""
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
