# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the hot inner loops.

Must stay operation-for-operation identical to `_ref.py`; the build uses
-ffp-contract=off so the C arithmetic rounds exactly like the numpy
reference and both backends agree on argmin choices.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, cos, fabs, sin, sqrt

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline double _clearance(const double[:, ::1] packed, Py_ssize_t j, double px, double py) noexcept nogil:
    cdef double dx = px - packed[j, 0]
    cdef double dy = py - packed[j, 1]
    cdef double z0 = packed[j, 2] * dx + packed[j, 3] * dy
    cdef double z1 = packed[j, 4] * dx + packed[j, 5] * dy
    cdef double code = packed[j, 7]
    cdef double n
    if code == 1.0:
        n = fabs(z0) + fabs(z1)
    elif code == 2.0:
        n = sqrt(z0 * z0 + z1 * z1)
    else:
        n = fabs(z0) if fabs(z0) >= fabs(z1) else fabs(z1)
    return n - packed[j, 6]


def clearances_point(double[:, ::1] packed, double px, double py):
    cdef Py_ssize_t m = packed.shape[0]
    out = np.empty(m)
    cdef double[::1] o = out
    cdef Py_ssize_t j
    for j in range(m):
        o[j] = _clearance(packed, j, px, py)
    return out


def clearances_points(double[:, ::1] packed, pts):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t k = p.shape[0]
    cdef Py_ssize_t m = packed.shape[0]
    out = np.empty((k, m))
    cdef double[:, ::1] o = out
    cdef double[:, ::1] pv = p
    cdef Py_ssize_t i, j
    for i in range(k):
        for j in range(m):
            o[i, j] = _clearance(packed, j, pv[i, 0], pv[i, 1])
    return out


def grid_best_response(
    double[::1] xF,
    double[::1] xLn,
    double[::1] grid_v,
    double[::1] grid_w,
    double[::1] q1,
    double[::1] q2,
    double q3,
    double[::1] r,
    double[::1] xd,
    double[:, ::1] packed,
    double[::1] bounds,
    double dt,
):
    """See `_ref.grid_best_response`; identical contract and tie-breaking."""
    cdef Py_ssize_t nv = grid_v.shape[0]
    cdef Py_ssize_t nw = grid_w.shape[0]
    cdef Py_ssize_t m = packed.shape[0]
    cdef double cf = cos(xF[2])
    cdef double sf = sin(xF[2])
    cdef double best = INFINITY
    cdef Py_ssize_t best_idx = -1
    cdef Py_ssize_t iv, iw, j
    cdef double v, w, px1, py1, th1, dx, dy, dth, ex, ey, eth, cost
    cdef bint ok

    with nogil:
        for iv in range(nv):
            v = grid_v[iv]
            px1 = xF[0] + v * cf * dt
            py1 = xF[1] + v * sf * dt
            ok = bounds[0] <= px1 <= bounds[1] and bounds[2] <= py1 <= bounds[3]
            if ok:
                for j in range(m):
                    if _clearance(packed, j, px1, py1) <= 0.0:
                        ok = False
                        break
            if not ok:
                continue
            dx = px1 - xLn[0]
            dy = py1 - xLn[1]
            ex = px1 - xd[0]
            ey = py1 - xd[1]
            for iw in range(nw):
                w = grid_w[iw]
                th1 = xF[2] + w * dt
                dth = th1 - xLn[2]
                eth = th1 - xd[2]
                cost = (
                    q1[0] * (dx * dx)
                    + q1[1] * (dy * dy)
                    + q1[2] * (dth * dth)
                    + q2[0] * (ex * ex)
                    + q2[1] * (ey * ey)
                    + q2[2] * (eth * eth)
                    + q3 * cos(xLn[2] - th1)
                    + r[0] * (v * v)
                    + r[1] * (w * w)
                )
                if cost < best:
                    best = cost
                    best_idx = iv * nw + iw
    return best_idx, best
