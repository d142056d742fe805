"""Kernel backend selection.

The compiled extension is preferred when built; setting KOOPGUIDE_PURE_PYTHON=1
forces the numpy fallback (used by tests and the backend benchmark).
Both backends implement the same contract and the same arithmetic order.
"""
from __future__ import annotations

import os

if os.environ.get("KOOPGUIDE_PURE_PYTHON", "") not in ("", "0"):
    from koopguide._kernels._ref import BACKEND_NAME, clearances_point, clearances_points, grid_best_response
else:
    try:
        from koopguide._kernels._core import (  # type: ignore[no-redef]
            BACKEND_NAME,
            clearances_point,
            clearances_points,
            grid_best_response,
        )
    except ImportError:
        from koopguide._kernels._ref import (  # type: ignore[no-redef]
            BACKEND_NAME,
            clearances_point,
            clearances_points,
            grid_best_response,
        )

__all__ = ["BACKEND_NAME", "clearances_point", "clearances_points", "grid_best_response"]
