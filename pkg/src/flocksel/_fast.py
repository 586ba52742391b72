"""Optional numba-accelerated inner loops.

The alignment force is the only O(N^2) hot spot; the fused symmetric loop
below avoids materializing the pair matrix. Everything falls back to the
vectorized numpy path when numba is absent, with identical results up to
floating-point reassociation.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

alignment_sum = None

if njit is not None:

    @njit(cache=True)
    def alignment_sum(x, v, gamma):  # noqa: F811
        """sum_j (1 + |x_i - x_j|^2)^(-gamma) (v_j - v_i), for every i."""
        n, d = x.shape
        acc = np.zeros((n, d))
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(d):
                    dx = x[i, k] - x[j, k]
                    r2 += dx * dx
                if gamma == 0.0:
                    w = 1.0
                elif gamma == 0.5:
                    w = 1.0 / np.sqrt(1.0 + r2)
                else:
                    w = (1.0 + r2) ** (-gamma)
                for k in range(d):
                    dv = w * (v[j, k] - v[i, k])
                    acc[i, k] += dv
                    acc[j, k] -= dv
        return acc
