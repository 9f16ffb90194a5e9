"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported.  Setting ``MHPL_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("MHPL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

topq_block = _impl.topq_block
ndr_scan = _impl.ndr_scan
kcenter_greedy = _impl.kcenter_greedy

__all__ = ["BACKEND", "topq_block", "ndr_scan", "kcenter_greedy"]
