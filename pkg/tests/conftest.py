"""Shared helpers for the test suite."""

import numpy as np


def central_diff(f, arr, step=1e-5):
    """Central finite-difference gradient of scalar f() with respect to arr.

    Perturbs arr in place, so f must read the same array object.
    """
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f()
        flat[i] = keep - step
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_gap(got, want, floor=1e-8):
    """Worst relative deviation between two arrays with an absolute floor."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.max(np.abs(want))) if want.size else 0.0, floor)
    return float(np.max(np.abs(got - want))) / scale if got.size else 0.0
