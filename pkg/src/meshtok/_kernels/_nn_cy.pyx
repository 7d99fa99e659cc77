# Nearest-neighbor squared-distance kernel.
#
# Must stay arithmetically identical to _nn_py.nn_sqdists: squared distance
# accumulated as ((dx*dx + dy*dy) + dz*dz), minimum keeping the first
# occurrence, so the two backends agree bitwise.

from libc.math cimport INFINITY

import numpy as np


def nn_sqdists(a, b):
    """For each row of a (n, 3), the squared distance to its nearest row of b (m, 3)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty(len(a), dtype=np.float64)
    cdef double[:, ::1] av = a
    cdef double[:, ::1] bv = b
    cdef double[::1] ov = out
    with nogil:
        _nn_sqdists(av, bv, ov)
    return out


cdef void _nn_sqdists(double[:, ::1] a, double[:, ::1] b, double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef double ax, ay, az, dx, dy, dz, d, best
    for i in range(n):
        ax = a[i, 0]
        ay = a[i, 1]
        az = a[i, 2]
        best = INFINITY
        for j in range(m):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            dz = az - b[j, 2]
            d = (dx * dx + dy * dy) + dz * dz
            if d < best:
                best = d
        out[i] = best
