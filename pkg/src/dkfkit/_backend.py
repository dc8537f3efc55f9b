"""Pick the compiled kernels when available, else the numpy reference.

Set ``DKFKIT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pycore

if os.environ.get("DKFKIT_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
    _impl = _pycore
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _pycore

BACKEND = "cython" if _impl is not _pycore else "python"

info_scan = _impl.info_scan
systematic_resample = _impl.systematic_resample
kernel_matrix = _impl.kernel_matrix
RBF = _pycore.RBF
MK = _pycore.MK
