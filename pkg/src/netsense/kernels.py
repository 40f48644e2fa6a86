"""Backend selection for the region-code kernels.

The compiled extension is used when importable; setting
``NETSENSE_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

if os.environ.get("NETSENSE_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

region_codes = _impl.region_codes
accumulate_transitions = _impl.accumulate_transitions
neighbor_mismatch_mask = _impl.neighbor_mismatch_mask

__all__ = [
    "BACKEND",
    "region_codes",
    "accumulate_transitions",
    "neighbor_mismatch_mask",
]
