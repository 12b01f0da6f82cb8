"""Backend selection for the rolling chi2 kernel.

The compiled ``_kernels`` extension is used when importable; otherwise a
numpy implementation with identical semantics (and identical floating-point
accumulation order) takes over.  Set ``CHARGEJUMPS_BACKEND=numpy`` to force
the fallback.
"""
import os

import numpy as np


def walk_segment_numpy(x, pred, weight, start, threshold, min_len):
    n_pts = x.shape[0]
    if start < 0 or start >= n_pts:
        raise ValueError("start outside scan")
    r = x[start:, None] - pred[start:]
    acc = np.cumsum(r * r * weight[start:], axis=0)
    arg = np.argmin(acc, axis=1)
    n = np.arange(1, n_pts - start + 1)
    chi = acc[n - 1, arg] / n
    over = np.flatnonzero((n > min_len) & (chi > threshold))
    if over.size:
        k = over[0]
        return int(start + k), chi[: k + 1], arg[: k + 1]
    return -1, chi, arg


try:
    from ._kernels import walk_segment as walk_segment_cython
except ImportError:  # pragma: no cover - depends on build
    walk_segment_cython = None

if walk_segment_cython is not None and os.environ.get("CHARGEJUMPS_BACKEND", "").lower() != "numpy":
    BACKEND = "cython"
    _walk = walk_segment_cython
else:
    BACKEND = "numpy"
    _walk = walk_segment_numpy


def walk_segment(x, pred, weight, start, threshold=np.inf, min_len=0):
    """Rolling minimum reduced chi2 for prefixes of the segment beginning at ``start``.

    Parameters
    ----------
    x : ndarray, shape (N,)
        Measured P1 values.
    pred, weight : ndarray, shape (N, n_theta)
        Template prediction and inverse variance for every point and trial phase.
    start : int
        First point of the segment.
    threshold : float
        Stop at the first prefix whose minimum reduced chi2 exceeds this.
    min_len : int
        The trigger is only honoured once the segment already holds more than
        ``min_len`` points before the trigger point.

    Returns
    -------
    trigger : int
        Absolute index of the trigger point, or -1.
    chi2_min : ndarray
        Minimum reduced chi2 for each prefix length 1..n.
    argmin : ndarray
        Index into the theta grid of the minimum, per prefix.
    """
    return _walk(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(pred, dtype=np.float64),
        np.ascontiguousarray(weight, dtype=np.float64),
        int(start), float(threshold), int(min_len),
    )
