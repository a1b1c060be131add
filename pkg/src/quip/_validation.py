"""Input checks that raise :class:`DataError` with a readable message."""

import numpy as np

from ._errors import DataError


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite, C-contiguous float64 2-D array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(arr)


def check_square(h, name="H"):
    h = as_matrix(h, name)
    if h.shape[0] != h.shape[1]:
        raise DataError(f"{name} must be square, got shape {h.shape}")
    return h


def check_symmetric(h, name="H"):
    h = check_square(h, name)
    tol = 1e-12 * np.maximum(1.0, np.abs(h))
    if np.any(np.abs(h - h.T) > tol):
        raise DataError(f"{name} is not symmetric")
    return h


def check_psd(h, name="H"):
    """Validate a symmetric positive semi-definite matrix."""
    h = check_symmetric(h, name)
    n = h.shape[0]
    if n == 0:
        raise DataError(f"{name} is empty")
    lam_min = np.linalg.eigvalsh(h)[0]
    if lam_min < -1e-8 * max(np.trace(h), 0.0) / n:
        raise DataError(f"{name} is not positive semi-definite (min eigenvalue {lam_min:.3e})")
    return h


def check_bits(bits):
    if isinstance(bits, bool) or int(bits) != bits or not 2 <= bits <= 16:
        raise DataError(f"bits must be an integer in [2, 16], got {bits}")
    return int(bits)


def check_same_columns(w, h):
    if w.shape[1] != h.shape[0]:
        raise DataError(f"W has {w.shape[1]} columns but H is {h.shape[0]}x{h.shape[1]}")
