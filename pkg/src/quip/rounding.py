"""Grid rounding, adaptive rounding with linear feedback, and its variants.

All routines take weights already mapped to grid units, so the grid is
``{0, 1, ..., 2**bits - 1}``.  With ``clamp=False`` the grid is the full set
of integers, which is the setting of the closed-form loss analysis.

Rows never interact: the feedback mixes columns only.  Work may therefore
be split across threads by rows, and per-row random streams keep the
result bit-identical to a sequential run.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _rng
from ._errors import DataError
from ._validation import as_matrix, check_bits, check_same_columns, check_symmetric
from .linalg import ldl_decompose

SUBROUTINES = ("nearest", "stochastic")


@dataclass(frozen=True)
class RoundingConfig:
    bits: int = 4
    subroutine: str = "nearest"
    seed: int = 0
    clamp: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.clamp:
            check_bits(self.bits)
        if self.subroutine not in SUBROUTINES:
            raise DataError(f"subroutine must be one of {SUBROUTINES}, got {self.subroutine!r}")
        if self.threads < 1:
            raise DataError("threads must be >= 1")

    @property
    def grid_max(self):
        return 2 ** self.bits - 1 if self.clamp else None


@dataclass
class RoundingTrace:
    """Per-entry rounding error ``Q(arg) - arg`` taken before any clamp."""

    eta: np.ndarray
    clamp_count: int
    arguments: np.ndarray


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    # x - trunc(x) is exact in binary floating point
    return whole + np.sign(x) * (np.abs(x - whole) >= 0.5)


def round_stochastic(x, u):
    """Round up with probability ``frac(x)``, using uniforms ``u`` in [0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    low = np.floor(x)
    return low + (u < (x - low))


def q_near(x, bits=None):
    """Nearest grid point; ties round half away from zero, then clamp."""
    r = round_half_away(x)
    return r if bits is None else np.clip(r, 0, 2 ** bits - 1)


def q_stoch(x, bits=None, rng=None, u=None):
    """Unbiased rounding: ``E[q_stoch(x)] = clamp(x, 0, 2**bits - 1)``."""
    if u is None:
        rng = _rng.generator(0) if rng is None else rng
        u = rng.random(np.shape(x))
    r = round_stochastic(x, u)
    return r if bits is None else np.clip(r, 0, 2 ** bits - 1)


def _check_feedback(u, n):
    u = as_matrix(u, "feedback matrix")
    if u.shape != (n, n):
        raise DataError(f"feedback matrix must be {n}x{n}, got {u.shape}")
    return np.triu(u, 1)


def _feedback_rows(w, u, subroutine, grid_max, uniforms):
    m, n = w.shape
    args = w.copy()
    w_hat = np.empty_like(w)
    eta = np.empty_like(w)
    clamps = 0
    nonzero_rows = np.any(u != 0, axis=1)
    for k in range(n):
        a = args[:, k]
        if subroutine == "nearest":
            q = round_half_away(a)
        else:
            q = round_stochastic(a, uniforms[:, k])
        eta[:, k] = q - a
        if grid_max is not None:
            clipped = np.clip(q, 0, grid_max)
            clamps += int(np.count_nonzero(clipped != q))
            q = clipped
        w_hat[:, k] = q
        if k + 1 < n and nonzero_rows[k]:
            residual = w[:, k] - q
            args[:, k + 1:] += residual[:, None] * u[k, k + 1:]
    return w_hat, eta, clamps, args


def round_with_linear_feedback(w, u, cfg=RoundingConfig(), uniforms=None, return_trace=False):
    """Column-sequential rounding ``W_hat = Q(W + (W - W_hat) U)``.

    Only the strictly upper triangle of ``u`` is used.  ``uniforms`` overrides
    the per-row random streams of the stochastic subroutine.
    """
    w = as_matrix(w, "W")
    m, n = w.shape
    u = _check_feedback(u, n)
    if cfg.subroutine == "stochastic" and uniforms is None:
        uniforms = _rng.row_uniforms(cfg.seed, m, n)
    chunks = [c for c in np.array_split(np.arange(m), min(cfg.threads, max(m, 1))) if len(c)]

    def run(rows):
        sub = None if uniforms is None else uniforms[rows]
        return _feedback_rows(w[rows], u, cfg.subroutine, cfg.grid_max, sub)

    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks] if chunks else [_feedback_rows(w, u, cfg.subroutine, cfg.grid_max, uniforms)]
    w_hat = np.vstack([p[0] for p in parts])
    if not return_trace:
        return w_hat
    trace = RoundingTrace(
        eta=np.vstack([p[1] for p in parts]),
        clamp_count=sum(p[2] for p in parts),
        arguments=np.vstack([p[3] for p in parts]),
    )
    return w_hat, trace


def ldlq(w, h, cfg=RoundingConfig(), uniforms=None, return_trace=False):
    """Adaptive rounding with the feedback taken from the LDL factor of ``h``."""
    w = as_matrix(w, "W")
    h = check_symmetric(h)
    check_same_columns(w, h)
    factors = ldl_decompose(h)
    return round_with_linear_feedback(w, factors.u_strict, cfg, uniforms, return_trace)


def _trailing_first_column(block):
    """First column of ``block^{-1}``, via pseudo-inverse when singular."""
    try:
        chol = np.linalg.cholesky(block)
        if np.min(np.diag(chol)) ** 2 > 1e-10 * np.max(np.diag(block)):
            e1 = np.zeros(block.shape[0])
            e1[0] = 1.0
            y = np.linalg.solve(chol, e1)
            return np.linalg.solve(chol.T, y)
    except np.linalg.LinAlgError:
        pass
    lam, q = np.linalg.eigh(block)
    keep = lam > 1e-10 * max(lam.max(), 0.0)
    return (q[:, keep] / lam[keep]) @ q[0, keep]


def optq_reference(w, h, cfg=RoundingConfig(), uniforms=None):
    """Error-propagation quantizer used as an independent oracle for :func:`ldlq`.

    Before rounding column ``t`` the remaining entries are moved to the
    proxy-loss minimizer given the already rounded prefix,
    ``delta[t:] = -delta[:t] H[:t, t:] inv(H[t:, t:])``; only the first entry
    of that update feeds the rounding decision.
    """
    w = as_matrix(w, "W")
    h = check_symmetric(h)
    check_same_columns(w, h)
    m, n = w.shape
    if cfg.subroutine == "stochastic" and uniforms is None:
        uniforms = _rng.row_uniforms(cfg.seed, m, n)
    grid_max = cfg.grid_max
    w_hat = np.empty_like(w)
    for t in range(n):
        arg = w[:, t].copy()
        if t:
            x = _trailing_first_column(h[t:, t:])
            propagate = h[:t, t:] @ x
            arg -= (w_hat[:, :t] - w[:, :t]) @ propagate
        if cfg.subroutine == "nearest":
            q = round_half_away(arg)
        else:
            q = round_stochastic(arg, uniforms[:, t])
        w_hat[:, t] = q if grid_max is None else np.clip(q, 0, grid_max)
    return w_hat


def _greedy_inputs(w, h, w_init):
    w = as_matrix(w, "W")
    h = check_symmetric(h)
    check_same_columns(w, h)
    w_init = w.copy() if w_init is None else as_matrix(w_init, "initial guess")
    if w_init.shape != w.shape:
        raise DataError(f"initial guess has shape {w_init.shape}, W has {w.shape}")
    diag = np.diag(h)
    if np.any(diag <= 0):
        raise DataError("greedy updates need a strictly positive diagonal of H")
    return w, h, w_init, diag


def _greedy_sweep(w, h, w_hat, diag, grid_max):
    grad = (w_hat - w) @ h
    changed = 0
    for j in range(w.shape[1]):
        z = w_hat[:, j] - grad[:, j] / diag[j]
        new = round_half_away(z)
        if grid_max is not None:
            new = np.clip(new, 0, grid_max)
        step = new - w_hat[:, j]
        moved = step != 0
        if np.any(moved):
            changed += int(np.count_nonzero(moved))
            w_hat[:, j] = new
            grad += step[:, None] * h[j]
    return changed


def greedy_pass(w, h, cfg=RoundingConfig(), w_init=None):
    """One pass of grid-restricted coordinate descent on the proxy loss.

    Coordinates are visited in column order.  Each entry is set to the
    minimizer of the scalar quadratic, rounded to the nearest grid point.
    With ``w_init`` on the grid the proxy loss cannot increase.
    """
    w, h, w_hat, diag = _greedy_inputs(w, h, w_init)
    w_hat = w_hat.copy()
    _greedy_sweep(w, h, w_hat, diag, cfg.grid_max)
    return w_hat


def greedy(w, h, cfg=RoundingConfig(), w_init=None, passes=10, history=False):
    """Repeated :func:`greedy_pass`, stopping early once a pass changes nothing.

    With ``history=True`` also returns the number of entries changed by each
    pass that ran.
    """
    if passes < 1:
        raise DataError("passes must be >= 1")
    w, h, w_hat, diag = _greedy_inputs(w, h, w_init)
    w_hat = w_hat.copy()
    changes = []
    for _ in range(passes):
        changes.append(_greedy_sweep(w, h, w_hat, diag, cfg.grid_max))
        if changes[-1] == 0:
            break
    return (w_hat, changes) if history else w_hat


def greedy_feedback_form(w, h, w_init, cfg=RoundingConfig()):
    """Matrix form of one greedy pass, ``W_hat = Q(V + (W - W_hat) U)``.

    ``U = (H * M) diag(H)^-1`` and ``V = W - (W_init - W)(H * M^T) diag(H)^-1``
    with ``M`` the strictly upper mask.  Equivalent to :func:`greedy_pass`;
    kept as a cross-check.
    """
    w, h, w_init, diag = _greedy_inputs(w, h, w_init)
    u = np.triu(h, 1) / diag
    v = w - (w_init - w) @ (np.tril(h, -1) / diag)
    n = w.shape[1]
    grid_max = cfg.grid_max
    w_hat = np.empty_like(w)
    for k in range(n):
        arg = v[:, k] + (w[:, :k] - w_hat[:, :k]) @ u[:k, k]
        q = round_half_away(arg)
        w_hat[:, k] = q if grid_max is None else np.clip(q, 0, grid_max)
    return w_hat


def ldlq_rg(w, h, cfg=RoundingConfig(), passes=10):
    """LDLQ in descending ``diag(H)`` order, followed by greedy passes."""
    w = as_matrix(w, "W")
    h = check_symmetric(h)
    check_same_columns(w, h)
    order = np.argsort(-np.diag(h), kind="stable")
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    w_hat = ldlq(w[:, order], h[np.ix_(order, order)], cfg)[:, inverse]
    return greedy(w, h, cfg, w_init=w_hat, passes=passes)
