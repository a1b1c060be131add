"""Binary matrix (QMAT) and quantized-layer (QZ) files, plus Hessian estimation.

QMAT layout, all little-endian::

    magic     6 B   b"QMAT1\\0"
    version   u8    1
    dtype     u8    0  (float64)
    reserved  17 B  zero
    rows      u64
    cols      u64
    payload   rows*cols float64, row-major

QZ layout, all little-endian::

    magic     6 B   b"QUIPZ\\0"
    version   u8    1
    bits      u8
    m, n      u64, u64
    scale     f64
    alpha     f64
    seed      u64
    p1 p2 q1 q2   u32 x4   Kronecker factor sizes; all zero = identity
    row_perm  u32 x m
    col_perm  u32 x n
    d_tilde   f64 x n
    codes     u16 x m*n, row-major
"""

import struct

import numpy as np

from ._errors import DataError, FormatError, IoError
from ._types import IncoherenceMeta, QuantizedLayer
from ._validation import as_matrix

QMAT_MAGIC = b"QMAT1\x00"
QMAT_VERSION = 1
QMAT_HEADER = struct.Struct("<6sBB17sQQ")  # 41 bytes incl. dims

QZ_MAGIC = b"QUIPZ\x00"
QZ_VERSION = 1
QZ_HEADER = struct.Struct("<6sBBQQddQIIII")


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, blob):
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def encode_matrix(m):
    m = as_matrix(m)
    rows, cols = m.shape
    header = QMAT_HEADER.pack(QMAT_MAGIC, QMAT_VERSION, 0, bytes(17), rows, cols)
    return header + m.astype("<f8").tobytes()


def decode_matrix(blob):
    if len(blob) < QMAT_HEADER.size:
        raise FormatError("truncated QMAT header")
    magic, version, dtype, _, rows, cols = QMAT_HEADER.unpack_from(blob)
    if magic != QMAT_MAGIC:
        raise FormatError(f"bad QMAT magic {magic!r}")
    if version != QMAT_VERSION:
        raise FormatError(f"unsupported QMAT version {version}")
    if dtype != 0:
        raise FormatError(f"unsupported QMAT element type {dtype}")
    expected = QMAT_HEADER.size + 8 * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"QMAT payload holds {(len(blob) - QMAT_HEADER.size) / 8:g} values, "
            f"header declares {rows}x{cols}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=QMAT_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError("QMAT payload contains NaN or Inf")
    return data.reshape(rows, cols)


def read_matrix(path):
    """Load a QMAT file as a float64 array, bit-exactly."""
    return decode_matrix(_read_bytes(path))


def write_matrix(m, path):
    _write_bytes(path, encode_matrix(m))


def hessian_from_calibration(x):
    """Second-moment matrix ``X^T X / N`` of calibration rows.

    Every row is weighted equally; damping belongs to the pre-processing step.
    """
    x = as_matrix(x, "calibration matrix")
    if x.shape[0] == 0:
        raise DataError("calibration matrix has no rows")
    h = x.T @ x / x.shape[0]
    return 0.5 * (h + h.T)


def encode_quantized(layer):
    meta = layer.meta
    codes = np.asarray(layer.codes)
    m, n = codes.shape
    if meta.shape != (m, n):
        raise DataError(f"metadata describes {meta.shape}, codes are {codes.shape}")
    if codes.min(initial=0) < 0 or codes.max(initial=0) > 2**meta.bits - 1:
        raise DataError("codes fall outside the grid")
    p1, p2 = meta.u_shapes
    q1, q2 = meta.v_shapes
    header = QZ_HEADER.pack(
        QZ_MAGIC, QZ_VERSION, meta.bits, m, n, meta.scale, meta.alpha, meta.seed,
        p1, p2, q1, q2,
    )
    return b"".join([
        header,
        np.asarray(meta.row_perm, dtype="<u4").tobytes(),
        np.asarray(meta.col_perm, dtype="<u4").tobytes(),
        np.asarray(meta.d_tilde, dtype="<f8").tobytes(),
        codes.astype("<u2").tobytes(),
    ])


def _check_perm(perm, name):
    if not np.array_equal(np.sort(perm), np.arange(len(perm))):
        raise FormatError(f"{name} is not a permutation")


def decode_quantized(blob):
    if len(blob) < QZ_HEADER.size:
        raise FormatError("truncated QZ header")
    (magic, version, bits, m, n, scale, alpha, seed,
     p1, p2, q1, q2) = QZ_HEADER.unpack_from(blob)
    if magic != QZ_MAGIC:
        raise FormatError(f"bad QZ magic {magic!r}")
    if version != QZ_VERSION:
        raise FormatError(f"unsupported QZ version {version}")
    if not 2 <= bits <= 16:
        raise FormatError(f"bits {bits} out of range")
    expected = QZ_HEADER.size + 4 * (m + n) + 8 * n + 2 * m * n
    if len(blob) != expected:
        raise FormatError(f"QZ file is {len(blob)} bytes, expected {expected}")
    if not (np.isfinite(scale) and np.isfinite(alpha)):
        raise DataError("QZ scale or damping is not finite")
    if scale <= 0:
        raise FormatError("QZ scale must be positive")
    identity = (p1, p2, q1, q2) == (0, 0, 0, 0)
    if not identity and (p1 * p2 != m or q1 * q2 != n):
        raise FormatError("Kronecker factor sizes do not match the layer shape")

    off = QZ_HEADER.size
    row_perm = np.frombuffer(blob, "<u4", m, off).astype(np.int64)
    off += 4 * m
    col_perm = np.frombuffer(blob, "<u4", n, off).astype(np.int64)
    off += 4 * n
    d_tilde = np.frombuffer(blob, "<f8", n, off).astype(np.float64)
    off += 8 * n
    codes = np.frombuffer(blob, "<u2", m * n, off).reshape(m, n).astype(np.uint16)

    _check_perm(row_perm, "row permutation")
    _check_perm(col_perm, "column permutation")
    if not np.all(np.isfinite(d_tilde)):
        raise DataError("QZ diagonal rescaler contains NaN or Inf")
    if np.any(d_tilde <= 0):
        raise FormatError("QZ diagonal rescaler must be strictly positive")
    if codes.size and codes.max() > 2**bits - 1:
        raise FormatError(f"code {codes.max()} exceeds the {bits}-bit grid")

    meta = IncoherenceMeta(
        seed=seed, bits=bits, alpha=alpha, scale=scale, d_tilde=d_tilde,
        u_shapes=(p1, p2), v_shapes=(q1, q2), row_perm=row_perm, col_perm=col_perm,
    )
    return QuantizedLayer(codes=codes, meta=meta)


def read_quantized(path):
    return decode_quantized(_read_bytes(path))


def write_quantized(layer, path):
    _write_bytes(path, encode_quantized(layer))
