"""NumPy fallback for the nearest-neighbor kernel.

Arithmetic matches the Cython kernel term for term (squared distance is
((dx*dx + dy*dy) + dz*dz), minimum keeps the first occurrence), so both
backends return bitwise-identical results.
"""

import numpy as np

# cap on the size of the (chunk, m) temporary distance matrix
_CHUNK_BUDGET = 4_000_000


def nn_sqdists(a, b):
    """For each row of a (n, 3), the squared distance to its nearest row of b (m, 3)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out
    step = max(1, _CHUNK_BUDGET // max(m, 1))
    for i in range(0, n, step):
        d = a[i : i + step, None, :] - b[None, :, :]
        np.multiply(d, d, out=d)
        out[i : i + step] = d.sum(axis=2).min(axis=1)
    return out
