"""Pure-numpy fallback for the compiled assignment kernel."""

from __future__ import annotations

import numpy as np


def assign_nearest(x: np.ndarray, codewords: np.ndarray):
    """For each row of x, the index of the nearest codeword.

    Squared Euclidean distance, ties toward the lowest codeword index
    (np.argmin keeps the first minimum). Returns (indices, squared dists).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    codewords = np.ascontiguousarray(codewords, dtype=np.float64)
    if x.shape[1] != codewords.shape[1]:
        raise ValueError("dimension mismatch between inputs and codewords")
    # ||x-c||^2 = ||x||^2 - 2 x.c + ||c||^2, computed blockwise to bound memory
    c_sq = np.einsum("kd,kd->k", codewords, codewords)
    n = x.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    block = max(1, (1 << 22) // max(1, codewords.shape[0]))
    for start in range(0, n, block):
        xb = x[start : start + block]
        d2 = c_sq[None, :] - 2.0 * (xb @ codewords.T)
        best = np.argmin(d2, axis=1)
        idx[start : start + block] = best
        rows = np.arange(xb.shape[0])
        dist[start : start + block] = d2[rows, best] + np.einsum(
            "nd,nd->n", xb, xb
        )
    np.maximum(dist, 0.0, out=dist)
    return idx, dist
