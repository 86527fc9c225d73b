"""Selects the compiled moment kernel when available.

Setting ``BIHARMONIC_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _core_py

BACKEND = "python"
power_log_moments = _core_py.power_log_moments

if os.environ.get("BIHARMONIC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core

        power_log_moments = _core.power_log_moments
        BACKEND = "cython"
    except ImportError:
        pass

__all__ = ["BACKEND", "power_log_moments"]
