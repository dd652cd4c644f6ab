"""Separable 1-D linear operators applied along the two spatial axes.

Every resampling step in the pipeline (pyramid blur/decimation, pyramid
expansion, bilinear resize) is a separable linear map.  Representing the
1-D factors as sparse matrices gives the forward pass and its exact adjoint
from the same object, with a fixed summation order.
"""
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def half_size(n):
    return (n + 1) // 2


@lru_cache(maxsize=256)
def downsample_matrix(n):
    """Blur with [1,4,6,4,1]/16 (edge replicate), keep even samples."""
    m = half_size(n)
    rows, cols, vals = [], [], []
    for i in range(m):
        x = 2 * i
        for t, w in zip(range(-2, 3), BINOMIAL5):
            rows.append(i)
            cols.append(min(max(x + t, 0), n - 1))
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


@lru_cache(maxsize=256)
def upsample_matrix(n, m):
    """Expand m coarse samples to n fine ones.

    Equivalent to zero-insertion followed by the gain-compensated kernel
    2*[1,4,6,4,1]/16, with the coarse grid edge-replicated at the borders:
    even outputs take (1,6,1)/8 of coarse samples i-1,i,i+1 and odd outputs
    take (4,4)/8 of i,i+1.
    """
    if half_size(n) != m:
        raise ValueError(f"cannot expand {m} samples to {n}")
    rows, cols, vals = [], [], []
    for x in range(n):
        for j in range(x // 2 - 1, x // 2 + 2):
            t = x - 2 * j
            if -2 <= t <= 2:
                rows.append(x)
                cols.append(min(max(j, 0), m - 1))
                vals.append(2.0 * BINOMIAL5[t + 2])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, m))


@lru_cache(maxsize=256)
def bilinear_matrix(n_in, n_out):
    """Half-pixel-centre (align_corners=False) linear interpolation, clamped."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    rows = np.concatenate([np.arange(n_out), np.arange(n_out)])
    cols = np.concatenate([i0, i1])
    vals = np.concatenate([1.0 - f, f])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_out, n_in))


def apply_separable(img, rows_op, cols_op):
    """Return rows_op @ img @ cols_op.T for each channel of an (H, W, C) array."""
    h, w, c = img.shape
    t = rows_op @ img.reshape(h, w * c)
    h2 = t.shape[0]
    t = t.reshape(h2, w, c).transpose(1, 0, 2).reshape(w, h2 * c)
    t = cols_op @ t
    w2 = t.shape[0]
    return np.ascontiguousarray(t.reshape(w2, h2, c).transpose(1, 0, 2))
