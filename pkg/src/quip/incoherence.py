"""Incoherence pre/post-processing and the end-to-end quantization pipeline.

Preprocessing damps H, rescales columns so that W and H are balanced,
permutes rows and columns, conjugates by seeded Kronecker-factored random
orthogonal matrices, and finally maps W affinely onto the grid.  Every
random object is regenerated from ``meta.seed`` and the stored factor
shapes, so a :class:`QuantizedLayer` is self-describing.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _rng
from ._errors import DataError
from ._types import IncoherenceMeta, LossReport, QuantizedLayer
from ._validation import as_matrix, check_bits, check_psd, check_same_columns
from .linalg import (
    KroneckerOrthogonal,
    invert_permutation,
    kron_apply,
    ldl_decompose,
    random_permutation,
    sym_eig,
)
from .rounding import RoundingConfig, greedy, ldlq, ldlq_rg, round_with_linear_feedback

DEFAULT_RHO = 2.4
DEFAULT_ALPHA = 0.01
METHODS = ("ldlq", "ldlq_rg", "greedy", "near", "stoch")
IDENTITY_SHAPES = (0, 0)
COLUMN_NORM_FLOOR = 1e-8


def _left_transform(meta):
    return KroneckerOrthogonal.from_shapes(meta.u_shapes, meta.seed, (_rng.U_LEFT, _rng.U_RIGHT))


def _right_transform(meta):
    return KroneckerOrthogonal.from_shapes(meta.v_shapes, meta.seed, (_rng.V_LEFT, _rng.V_RIGHT))


def conjugate(k, h, transpose=False):
    """``K H K^T`` (or ``K^T H K``) via two structured multiplies, symmetrized."""
    out = kron_apply(k, kron_apply(k, h, "left", transpose), "right", not transpose)
    return 0.5 * (out + out.T)


def rotate_hessian(h, seed):
    """``V H V^T`` with the same two-factor V the pipeline would draw for ``seed``."""
    h = as_matrix(h, "H")
    v = KroneckerOrthogonal.from_seed(h.shape[0], seed, (_rng.V_LEFT, _rng.V_RIGHT))
    return conjugate(v, h)


def damp(h, alpha):
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    n = h.shape[0]
    return h + alpha * np.mean(np.diag(h)) * np.eye(n)


def preprocess(w, h, bits=4, rho=DEFAULT_RHO, alpha=DEFAULT_ALPHA, seed=0, incoherence=True):
    """Map ``(W, H)`` into grid coordinates.

    Returns ``(W', H', meta)`` with ``W'`` clamped to ``[0, 2**bits - 1]``;
    ``meta.clamp_count`` records how many entries the clamp touched.
    ``rho=None`` sizes the range by ``max|W|`` instead, so nothing clamps.
    """
    w = as_matrix(w, "W")
    h = check_psd(h)
    check_same_columns(w, h)
    bits = check_bits(bits)
    if rho is not None and not rho > 0:
        raise DataError(f"rho must be > 0, got {rho}")
    m, n = w.shape
    h = damp(h, alpha)

    if incoherence:
        hd = np.diag(h)
        if np.any(hd <= 0):
            raise DataError("diag(H) must be positive after damping")
        col_sq = np.sum(w * w, axis=0)
        if np.any(col_sq == 0):
            warnings.warn(f"{int(np.sum(col_sq == 0))} zero column(s) in W; "
                          f"flooring their norm at {COLUMN_NORM_FLOOR}", RuntimeWarning, stacklevel=2)
            col_sq = np.maximum(col_sq, COLUMN_NORM_FLOOR)
        d_tilde = (hd / col_sq) ** 0.25
        w = w * d_tilde
        h = h / np.outer(d_tilde, d_tilde)
        row_perm = random_permutation(m, seed, _rng.ROW_PERM)
        col_perm = random_permutation(n, seed, _rng.COL_PERM)
        w = w[row_perm][:, col_perm]
        h = h[np.ix_(col_perm, col_perm)]
        u = KroneckerOrthogonal.from_seed(m, seed, (_rng.U_LEFT, _rng.U_RIGHT))
        v = KroneckerOrthogonal.from_seed(n, seed, (_rng.V_LEFT, _rng.V_RIGHT))
        w = kron_apply(v, kron_apply(u, w, "left"), "right", transpose=True)
        h = conjugate(v, h)
        u_shapes, v_shapes = u.shapes, v.shapes
    else:
        d_tilde = np.ones(n)
        row_perm, col_perm = np.arange(m), np.arange(n)
        u_shapes = v_shapes = IDENTITY_SHAPES

    if rho is None:
        scale = float(np.max(np.abs(w)))
    else:
        scale = float(rho * np.linalg.norm(w) / np.sqrt(m * n))
    if not scale > 0:
        raise DataError("W is identically zero; nothing to quantize")
    top = 2 ** bits - 1
    w = 0.5 * (w / scale + 1.0) * top
    clamped = np.clip(w, 0, top)
    meta = IncoherenceMeta(
        seed=int(seed), bits=bits, alpha=float(alpha), scale=scale, d_tilde=d_tilde,
        u_shapes=tuple(u_shapes), v_shapes=tuple(v_shapes),
        row_perm=row_perm, col_perm=col_perm,
        rho=float("nan") if rho is None else float(rho),
        clamp_count=int(np.count_nonzero(clamped != w)),
    )
    return clamped, h, meta


def postprocess(w_hat, meta):
    """Invert :func:`preprocess` (up to rounding and clamping)."""
    w = as_matrix(w_hat, "W_hat")
    if w.shape != meta.shape:
        raise DataError(f"W_hat has shape {w.shape}, metadata describes {meta.shape}")
    top = 2 ** meta.bits - 1
    w = meta.scale * (w / top * 2.0 - 1.0)
    if meta.incoherence_enabled:
        w = kron_apply(_left_transform(meta), w, "left", transpose=True)
        w = kron_apply(_right_transform(meta), w, "right")
        w = w[invert_permutation(meta.row_perm)][:, invert_permutation(meta.col_perm)]
    return w / meta.d_tilde


def dequantize(layer):
    return postprocess(layer.codes.astype(np.float64), layer.meta)


def mu_hessian(h, method="lapack"):
    """``sqrt(n) * max |Q_ij|`` over the eigenvectors of ``h``."""
    q, _ = sym_eig(h, method)
    return float(np.sqrt(q.shape[0]) * np.max(np.abs(q)))


def mu_weights(w):
    w = as_matrix(w, "W")
    fro = np.linalg.norm(w)
    if fro == 0:
        raise DataError("incoherence of the zero matrix is undefined")
    return float(np.max(np.abs(w)) * np.sqrt(w.size) / fro)


def proxy_loss(w, w_hat, h):
    """``tr((W_hat - W) H (W_hat - W)^T)``."""
    w = as_matrix(w, "W")
    w_hat = as_matrix(w_hat, "W_hat")
    h = as_matrix(h, "H")
    if w.shape != w_hat.shape:
        raise DataError(f"W is {w.shape} but W_hat is {w_hat.shape}")
    check_same_columns(w, h)
    e = w_hat - w
    return float(np.sum((e @ h) * e))


@dataclass
class QuipResult:
    layer: QuantizedLayer
    w_hat: np.ndarray
    report: LossReport


def round_processed(w, h, method="ldlq", bits=4, seed=0, passes=10, subroutine="nearest",
                    threads=1):
    """Run one rounding method on already processed grid-scale inputs."""
    if method not in METHODS:
        raise DataError(f"method must be one of {METHODS}, got {method!r}")
    zero = np.zeros((w.shape[1], w.shape[1]))
    if method == "near":
        return round_with_linear_feedback(w, zero, RoundingConfig(bits, "nearest", seed, True, threads))
    if method == "stoch":
        return round_with_linear_feedback(w, zero, RoundingConfig(bits, "stochastic", seed, True, threads))
    cfg = RoundingConfig(bits, subroutine, seed, True, threads)
    if method == "ldlq":
        return ldlq(w, h, cfg)
    if method == "ldlq_rg":
        return ldlq_rg(w, h, cfg, passes)
    return greedy(w, h, cfg, passes=passes)


def quip(w, h, bits=4, method="ldlq", incoherence=True, rho=DEFAULT_RHO, alpha=DEFAULT_ALPHA,
         seed=0, passes=10, subroutine="nearest", threads=1):
    """Quantize ``W`` against proxy Hessian ``H``.

    Returns codes plus metadata, the de-quantized matrix, and a
    :class:`LossReport`.  Identical arguments give bit-identical output
    for any ``threads``.
    """
    w = as_matrix(w, "W")
    h_raw = check_psd(h)
    wp, hp, meta = preprocess(w, h_raw, bits, rho, alpha, seed, incoherence)
    grid = round_processed(wp, hp, method, bits, seed, passes, subroutine, threads)
    codes = grid.astype(np.uint16)
    layer = QuantizedLayer(codes, meta)
    w_hat = dequantize(layer)
    factors = ldl_decompose(hp)
    report = LossReport(
        proxy_loss=proxy_loss(w, w_hat, damp(h_raw, alpha)),
        proxy_loss_raw=proxy_loss(w, w_hat, h_raw),
        trace_d=float(np.sum(factors.d)),
        trace_h=float(np.trace(hp)),
        mu_h=mu_hessian(hp),
        mu_w=mu_weights(wp - (2 ** bits - 1) / 2.0) if np.any(wp != (2 ** bits - 1) / 2.0) else 1.0,
        clamp_count=meta.clamp_count,
        method=method,
        bits=bits,
        seed=int(seed),
    )
    return QuipResult(layer, w_hat, report)
