"""Backend selection for the hot kernels.

The compiled extension is used when importable; setting the environment
variable ``REGIMEFIT_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("REGIMEFIT_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # noqa: F811
    except ImportError:
        _impl = _kernels_py
    else:
        BACKEND = "cython"

segment_rss_table = _impl.segment_rss_table
dp_sweep = _impl.dp_sweep
forward_backward = _impl.forward_backward

__all__ = ["BACKEND", "segment_rss_table", "dp_sweep", "forward_backward"]
