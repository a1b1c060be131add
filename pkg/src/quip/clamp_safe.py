"""Rounding with a provable in-range guarantee.

We solve

    minimize    tr(H R^T R)
    over        R unit upper triangular
    subject to  ||R e_j||^2 <= 1 + c  for every column j

through its Lagrange dual.  For multipliers ``lam >= 0`` the inner problem
is unconstrained with ``H + diag(lam)`` in place of ``H``, and its minimizer
is the inverse of the unit LDL factor, so

    g(lam) = tr(D(H + diag(lam))) - (1 + c) * sum(lam)

is concave with gradient ``||R(lam) e_j||^2 - (1 + c)``.  ``g`` is maximized
with bound-constrained L-BFGS, and the primal point is made exactly feasible
by shrinking the off-diagonal part of any column that still overshoots.
The gap between the two is checked before returning.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from . import _rng
from ._errors import DataError, NumericalError
from ._types import IncoherenceMeta, QuantizedLayer
from ._validation import as_matrix, check_bits, check_psd, check_same_columns
from .incoherence import conjugate, dequantize, proxy_loss
from .linalg import KroneckerOrthogonal, kron_apply, ldl_decompose, psd_sqrt
from .rounding import RoundingConfig, round_with_linear_feedback


@dataclass
class ConstrainedFactor:
    r: np.ndarray
    c: float
    objective: float
    solver_iters: int
    residual: float
    dual_value: float

    @property
    def feedback(self):
        """``R^{-1} - I``, the strictly upper feedback matrix."""
        n = self.r.shape[0]
        inv = solve_triangular(self.r, np.eye(n), unit_diagonal=True)
        return np.triu(inv, 1)


def _inverse_unit_factor(h):
    f = ldl_decompose(h)
    r = solve_triangular(f.unit, np.eye(len(f.d)), unit_diagonal=True)
    return np.triu(r, 1) + np.eye(len(f.d)), f.d


def _dual(lam, h, c):
    r, d = _inverse_unit_factor(h + np.diag(lam))
    colsq = np.sum(r * r, axis=0)
    value = np.sum(d) - (1.0 + c) * np.sum(lam)
    return value, colsq - (1.0 + c), r


def _objective(h, r):
    return float(np.sum((r @ h) * r))


def _polish(r, c):
    r = r.copy()
    off = np.sum(r * r, axis=0) - 1.0
    for j in np.nonzero(off > c)[0]:
        r[:j, j] *= np.sqrt(c / off[j])
    return r


def solve_constrained(h, c, tol=1e-8, max_iters=500, gap_rtol=1e-6):
    """Constrained unit upper triangular factor of ``h``.

    Raises :class:`NumericalError` if L-BFGS stops without closing the
    duality gap to ``gap_rtol * tr(H)``; the error carries the gap and the
    residual.
    """
    h = check_psd(h)
    if not c > 0:
        raise DataError(f"c must be > 0, got {c}")
    n = h.shape[0]
    scale = max(np.trace(h) / n, np.finfo(float).tiny)
    value0, grad0, r0 = _dual(np.zeros(n), h, c)
    if np.max(grad0) <= tol:
        # constraints inactive: the plain LDL factor is optimal
        return ConstrainedFactor(r0, c, _objective(h, r0), 0, max(float(np.max(grad0)), 0.0), value0)

    def negdual(x):
        v, g, _ = _dual(x * scale, h, c)
        return -v / scale, -g

    res = minimize(negdual, np.zeros(n), jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * n,
                   options={"maxiter": max_iters, "ftol": 1e-15, "gtol": 1e-12})
    lam = res.x * scale
    dual_value, _, r = _dual(lam, h, c)
    r = _polish(r, c)
    objective = _objective(h, r)
    residual = max(float(np.max(np.sum(r * r, axis=0) - (1.0 + c))), 0.0)
    gap = objective - dual_value
    if residual > tol or gap > gap_rtol * max(np.trace(h), 1e-300):
        raise NumericalError("constrained factor did not converge", gap=gap,
                             residual=residual, iterations=int(res.nit), status=str(res.message))
    return ConstrainedFactor(r, c, objective, int(res.nit), residual, float(dual_value))


def constraint_level(m, n, delta):
    """``c = 2 / log(4 m n / delta)``."""
    if not 0 < delta < 1:
        raise DataError(f"delta must lie in (0, 1), got {delta}")
    return 2.0 / np.log(4.0 * m * n / delta)


def range_multiplier(m, n, delta):
    """Gaussian-tail multiplier ``sqrt(2 log(4 m n / delta))`` for the Frobenius variant."""
    return float(np.sqrt(2.0 * np.log(4.0 * m * n / delta)))


@dataclass
class ClampSafeStats:
    clamp_fired: bool
    out_of_range: int
    range_violations: int
    proxy_loss: float
    bound_scale: float
    k_ratio: float
    c: float
    factor: ConstrainedFactor


def quantize_clamp_safe(w, h, bits=3, delta=0.05, seed=0, variant="frobenius", tol=1e-8,
                        max_iters=500):
    """Rotate, map into ``[1, 2**bits - 2]`` and stochastically round with feedback ``R^{-1} - I``.

    ``variant="frobenius"`` sizes the range from ``||W'||_F`` with a
    Gaussian-tail multiplier; ``variant="inf"`` uses ``max |W'|``, which
    keeps every mapped entry in range deterministically.  Returns the layer
    (decodable with :func:`quip.incoherence.dequantize`) and statistics.
    """
    w = as_matrix(w, "W")
    h = check_psd(h)
    check_same_columns(w, h)
    bits = check_bits(bits)
    if bits < 3:
        raise DataError("clamp-safe rounding needs bits >= 3")
    if variant not in ("frobenius", "inf"):
        raise DataError(f"variant must be 'frobenius' or 'inf', got {variant!r}")
    m, n = w.shape
    c = constraint_level(m, n, delta)
    u = KroneckerOrthogonal.from_seed(m, seed, (_rng.U_LEFT, _rng.U_RIGHT))
    v = KroneckerOrthogonal.from_seed(n, seed, (_rng.V_LEFT, _rng.V_RIGHT))
    wr = kron_apply(v, kron_apply(u, w, "left"), "right", transpose=True)
    hr = conjugate(v, h)
    if variant == "inf":
        s = float(np.max(np.abs(wr)))
    else:
        s = range_multiplier(m, n, delta) * float(np.linalg.norm(wr)) / np.sqrt(m * n)
    if not s > 0:
        raise DataError("W is identically zero; nothing to quantize")
    top = 2 ** bits - 1
    mapped = (top - 2) / 2.0 * (wr / s + 1.0) + 1.0
    range_violations = int(np.count_nonzero((mapped < 1.0) | (mapped > top - 1)))

    factor = solve_constrained(hr, c, tol, max_iters)
    cfg = RoundingConfig(bits, "stochastic", seed, True)
    grid, trace = round_with_linear_feedback(mapped, factor.feedback, cfg, return_trace=True)
    args = trace.arguments
    out_of_range = int(np.count_nonzero((args < 0) | (args > top)))

    meta = IncoherenceMeta(
        seed=int(seed), bits=bits, alpha=0.0, scale=s * top / (top - 2), d_tilde=np.ones(n),
        u_shapes=u.shapes, v_shapes=v.shapes, row_perm=np.arange(m), col_perm=np.arange(n),
        clamp_count=trace.clamp_count,
    )
    layer = QuantizedLayer(grid.astype(np.uint16), meta)
    loss = proxy_loss(w, dequantize(layer), h)
    root_trace = float(np.trace(psd_sqrt(h)))
    bound_scale = root_trace ** 2 * float(np.sum(w * w)) / (n ** 2 * 4.0 ** bits)
    stats = ClampSafeStats(
        clamp_fired=out_of_range > 0,
        out_of_range=out_of_range,
        range_violations=range_violations,
        proxy_loss=loss,
        bound_scale=bound_scale,
        k_ratio=loss / bound_scale if bound_scale > 0 else float("nan"),
        c=c,
        factor=factor,
    )
    return layer, stats
