"""Pure-numpy kernel implementations (fallback when the extension is absent).

These mirror the compiled versions in `_core.pyx` operation-for-operation;
the expression order is part of the contract so that both backends pick the
same argmin even on near-tied costs.  `packed` rows follow
`environment.PACKED_WIDTH`: [cx, cy, L00, L01, L10, L11, r, norm_code].
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def clearances_point(packed: np.ndarray, px: float, py: float) -> np.ndarray:
    """Clearance of one position to every packed obstacle, shape (M,)."""
    dx = px - packed[:, 0]
    dy = py - packed[:, 1]
    z0 = packed[:, 2] * dx + packed[:, 3] * dy
    z1 = packed[:, 4] * dx + packed[:, 5] * dy
    code = packed[:, 7]
    n = np.where(
        code == 1.0,
        np.abs(z0) + np.abs(z1),
        np.where(code == 2.0, np.sqrt(z0 * z0 + z1 * z1), np.maximum(np.abs(z0), np.abs(z1))),
    )
    return n - packed[:, 6]


def clearances_points(packed: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Clearances for many positions, shape (K, M)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    dx = pts[:, 0:1] - packed[None, :, 0]
    dy = pts[:, 1:2] - packed[None, :, 1]
    z0 = packed[None, :, 2] * dx + packed[None, :, 3] * dy
    z1 = packed[None, :, 4] * dx + packed[None, :, 5] * dy
    code = packed[None, :, 7]
    n = np.where(
        code == 1.0,
        np.abs(z0) + np.abs(z1),
        np.where(code == 2.0, np.sqrt(z0 * z0 + z1 * z1), np.maximum(np.abs(z0), np.abs(z1))),
    )
    return n - packed[None, :, 6]


def grid_best_response(
    xF: np.ndarray,
    xLn: np.ndarray,
    grid_v: np.ndarray,
    grid_w: np.ndarray,
    q1: np.ndarray,
    q2: np.ndarray,
    q3: float,
    r: np.ndarray,
    xd: np.ndarray,
    packed: np.ndarray,
    bounds: np.ndarray,
    dt: float,
) -> tuple[int, float]:
    """Exhaustive best response on the (v, w) grid.

    Evaluates the follower's one-step cost against the leader's successor
    state `xLn` for every grid candidate whose own successor stays inside
    the workspace and strictly outside every obstacle.  Returns
    ``(iv * len(grid_w) + iw, cost)`` of the first minimizer in (v, w)-major
    order, or ``(-1, inf)`` when no candidate is safe.
    """
    cf = np.cos(xF[2])
    sf = np.sin(xF[2])
    px1 = xF[0] + grid_v * cf * dt            # (nv,)
    py1 = xF[1] + grid_v * sf * dt
    th1 = xF[2] + grid_w * dt                 # (nw,)

    safe = (px1 >= bounds[0]) & (px1 <= bounds[1]) & (py1 >= bounds[2]) & (py1 <= bounds[3])
    if packed.shape[0] > 0:
        cs = clearances_points(packed, np.stack([px1, py1], axis=1))
        safe &= np.all(cs > 0.0, axis=1)
    if not safe.any():
        return -1, np.inf

    dx = (px1 - xLn[0])[:, None]
    dy = (py1 - xLn[1])[:, None]
    dth = (th1 - xLn[2])[None, :]
    ex = (px1 - xd[0])[:, None]
    ey = (py1 - xd[1])[:, None]
    eth = (th1 - xd[2])[None, :]
    cost = (
        q1[0] * (dx * dx)
        + q1[1] * (dy * dy)
        + q1[2] * (dth * dth)
        + q2[0] * (ex * ex)
        + q2[1] * (ey * ey)
        + q2[2] * (eth * eth)
        + q3 * np.cos(xLn[2] - th1)[None, :]
        + r[0] * (grid_v * grid_v)[:, None]
        + r[1] * (grid_w * grid_w)[None, :]
    )
    cost = np.where(safe[:, None], cost, np.inf)
    idx = int(np.argmin(cost))
    return idx, float(cost.flat[idx])
