"""Monte Carlo estimators, worst-case constructions, and bound audits.

The estimators round to the integers with clamping disabled, which is the
setting in which the closed-form losses hold exactly.  Each trial draws
from its own streams, so results do not depend on how trials are batched
or spread over threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _rng
from ._errors import DataError, NumericalError
from ._types import HessianStats
from ._validation import as_matrix, check_psd
from .incoherence import mu_hessian, proxy_loss, rotate_hessian
from .linalg import ldl_decompose, psd_sqrt, sym_eig
from .rounding import (
    RoundingConfig,
    ldlq,
    q_near,
    round_half_away,
    round_stochastic,
    round_with_linear_feedback,
)

__all__ = [
    "AVG_METHODS",
    "TraceAudit",
    "audit_trace_bound",
    "closed_form_avg",
    "closed_form_worst",
    "counterexample_losses",
    "estimate_avg_loss",
    "estimate_worst_loss",
    "hessian_stats",
    "make_counterexample",
    "mu_after_rotation",
    "proxy_loss",
    "row_losses",
    "worst_case_feedback_run",
    "worst_case_weights",
]

AVG_METHODS = ("near", "stoch", "ldlq", "ldlq_stoch")
_WEIGHT_STREAM = 1 << 48
_SIGN_STREAM = 1 << 49
_TRIAL_BATCH = 256


def row_losses(e, h):
    """``e_i H e_i^T`` for every row ``e_i`` of the error matrix."""
    return np.sum((e @ h) * e, axis=1)


def _method_parts(method, h):
    if method not in AVG_METHODS:
        raise DataError(f"method must be one of {AVG_METHODS}, got {method!r}")
    n = h.shape[0]
    u = ldl_decompose(h).u_strict if method.startswith("ldlq") else np.zeros((n, n))
    subroutine = "stochastic" if method.endswith("stoch") else "nearest"
    return u, subroutine


def _run_trials(trials, threads, one_trial):
    batches = [range(a, min(a + _TRIAL_BATCH, trials)) for a in range(0, trials, _TRIAL_BATCH)]

    def run(batch):
        return np.array([one_trial(t) for t in batch])

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    losses = np.concatenate(parts)
    return float(np.mean(losses)), float(np.std(losses, ddof=1) / np.sqrt(trials))


def estimate_avg_loss(method, h, m, trials=2000, seed=0, threads=1):
    """Mean and standard error of the proxy loss over ``W ~ Unif[0, 1]^{m x n}``.

    ``method`` is one of ``near``, ``stoch`` (independent rounding) or
    ``ldlq``, ``ldlq_stoch`` (LDL feedback with that subroutine).
    """
    h = check_psd(h)
    if trials < 100:
        raise DataError("trials must be >= 100")
    n = h.shape[0]
    u, subroutine = _method_parts(method, h)
    cfg = RoundingConfig(subroutine=subroutine, seed=seed, clamp=False)

    def one_trial(t):
        w = _rng.generator(seed, _WEIGHT_STREAM + t).random((m, n))
        unif = _rng.row_uniforms(seed, m, n, offset=t * m) if subroutine == "stochastic" else None
        w_hat = round_with_linear_feedback(w, u, cfg, uniforms=unif)
        return np.sum(row_losses(w_hat - w, h))

    return _run_trials(trials, threads, one_trial)


def closed_form_avg(method, h, m):
    """``(m / 12) tr(.)`` for nearest, ``(m / 6) tr(.)`` for stochastic; ``tr(D)`` under LDL feedback."""
    h = check_psd(h)
    _, subroutine = _method_parts(method, h)
    trace = float(np.sum(ldl_decompose(h).d)) if method.startswith("ldlq") else float(np.trace(h))
    return m * trace / (12.0 if subroutine == "nearest" else 6.0)


def worst_case_weights(m, n, eps, seed):
    """I.i.d. entries ``1/2 - eps`` or ``1/2 + eps`` with equal probability."""
    if not 0 < eps < 0.5:
        raise DataError(f"eps must lie in (0, 0.5), got {eps}")
    signs = _rng.generator(seed, _SIGN_STREAM).integers(0, 2, size=(m, n)) * 2 - 1
    return 0.5 + eps * signs


def worst_case_feedback_run(u, m, eps, seed, subroutine="nearest", uniforms=None):
    """Build ``W`` column by column so every rounding argument is ``1/2 +- eps``.

    Under feedback ``u`` the argument for column ``k`` is ``W_k`` plus a term
    fixed by earlier columns; choosing ``W_k`` to cancel it puts each
    argument exactly on ``worst_case_weights``.  Returns ``(W, W_hat)``;
    running the feedback rounding on ``W`` reproduces ``W_hat``.
    """
    u = np.triu(as_matrix(u, "feedback matrix"), 1)
    n = u.shape[0]
    target = worst_case_weights(m, n, eps, seed)
    if subroutine == "stochastic" and uniforms is None:
        uniforms = _rng.row_uniforms(seed, m, n)
    w = np.empty((m, n))
    w_hat = np.empty((m, n))
    feedback = np.zeros((m, n))
    for k in range(n):
        w[:, k] = target[:, k] - feedback[:, k]
        if subroutine == "nearest":
            q = round_half_away(target[:, k])
        else:
            q = round_stochastic(target[:, k], uniforms[:, k])
        w_hat[:, k] = q
        if k + 1 < n:
            feedback[:, k + 1:] += (w[:, k] - q)[:, None] * u[k, k + 1:]
    return w, w_hat


def estimate_worst_loss(method, h, m, eps=1e-3, trials=200, seed=0, threads=1):
    """Proxy loss on the ``1/2 +- eps`` construction.

    Independent rounding (``near``, ``stoch``) uses i.i.d. worst-case
    weights.  With LDL feedback (``ldlq``, ``ldlq_stoch``) the weights are
    built adaptively so the rounding arguments, not the raw weights, are
    ``1/2 +- eps``.
    """
    h = check_psd(h)
    n = h.shape[0]
    u, subroutine = _method_parts(method, h)

    def one_trial(t):
        tseed = _trial_seed(seed, t)
        unif = _rng.row_uniforms(tseed, m, n) if subroutine == "stochastic" else None
        if method.startswith("ldlq"):
            w, w_hat = worst_case_feedback_run(u, m, eps, tseed, subroutine, unif)
        else:
            w = worst_case_weights(m, n, eps, tseed)
            cfg = RoundingConfig(subroutine=subroutine, seed=tseed, clamp=False)
            w_hat = round_with_linear_feedback(w, u, cfg, uniforms=unif)
        return np.sum(row_losses(w_hat - w, h))

    return _run_trials(trials, threads, one_trial)


def _trial_seed(seed, t):
    # distinct trial seeds that stay in the unsigned 64-bit range
    return (int(seed) * 1_000_003 + int(t)) % (1 << 64)


def closed_form_worst(method, h, m, eps=None):
    """``(m / 4) tr(.)``, or the exact finite-``eps`` expectation when ``eps`` is given.

    Nearest rounding of ``1/2 +- eps`` errs by ``1/2 - eps`` in magnitude;
    stochastic rounding has error variance ``1/4 - eps^2``.
    """
    h = check_psd(h)
    _, subroutine = _method_parts(method, h)
    trace = float(np.sum(ldl_decompose(h).d)) if method.startswith("ldlq") else float(np.trace(h))
    if eps is None:
        return m * trace / 4.0
    per_entry = (0.5 - eps) ** 2 if subroutine == "nearest" else 0.25 - eps ** 2
    return m * per_entry * trace


def make_counterexample(n, d=16, c=0.01):
    """``(W, H)`` on which clamped LDLQ loses to nearest rounding on a 4-bit grid.

    ``H`` is ``ones + I`` with the last diagonal entry reset to 1 and a
    small perturbation of the first row and column; ``W`` sits just below
    and above 1/2 in alternating columns.
    """
    if n < 3:
        raise DataError(f"counterexample needs n >= 3, got {n}")
    h = np.ones((n, n)) + np.eye(n)
    h[n - 1, n - 1] = 1.0
    h[0, 1:n - 1] += 2 * c
    h[1:n - 1, 0] += 2 * c
    h[0, n - 1] += c
    h[n - 1, 0] += c
    h[0, 0] += 4 * c + n * c ** 2
    lam_min = np.linalg.eigvalsh(h)[0]
    if lam_min < -1e-8 * np.trace(h) / n:
        raise NumericalError("counterexample Hessian is not PSD", min_eigenvalue=lam_min)
    w = 0.499 * np.ones((d, n)) + 0.002 * (np.arange(n) % 2)
    return w, h


def counterexample_losses(n, d=16, c=0.01, bits=4):
    """``(loss of clamped LDLQ-nearest, loss of nearest)`` on the counterexample."""
    w, h = make_counterexample(n, d, c)
    cfg = RoundingConfig(bits=bits)
    return proxy_loss(w, ldlq(w, h, cfg), h), proxy_loss(w, q_near(w, bits), h)


def hessian_stats(h):
    h = check_psd(h)
    n = h.shape[0]
    _, lam = sym_eig(h)
    top = lam[0]
    if not top > 0:
        raise DataError("H is zero; statistics are undefined")
    return HessianStats(
        frac_rank_abs=float(np.count_nonzero(lam > 1e-10 * top) / n),
        frac_rank_approx=float(np.count_nonzero(lam > 0.01 * top) / n),
        trace_ratio=float(np.sum(ldl_decompose(h).d) / np.trace(h)),
        n=n,
    )


@dataclass
class TraceAudit:
    lhs: float
    rhs: float
    mu: float
    holds: bool


def audit_trace_bound(h, mu=None):
    """Compare ``tr(D)`` against ``(mu^2 / n) tr(H^{1/2})^2``.

    ``mu`` defaults to the measured incoherence of ``h``.  Passing the
    incoherence of another valid eigenbasis is allowed; for ``H = I`` with
    ``mu = 1`` (a flat basis) both sides equal ``n``, and a relative slack
    of 1e-9 absorbs rounding at that boundary.
    """
    h = check_psd(h)
    n = h.shape[0]
    mu = mu_hessian(h) if mu is None else float(mu)
    lhs = float(np.sum(ldl_decompose(h).d))
    rhs = float(mu ** 2 / n * np.trace(psd_sqrt(h)) ** 2)
    return TraceAudit(lhs, rhs, mu, lhs <= rhs * (1 + 1e-9) + 1e-300)


def mu_after_rotation(spectrum, seed):
    """Incoherence of ``V diag(spectrum) V^T`` for the pipeline's two-factor ``V``."""
    return mu_hessian(rotate_hessian(np.diag(np.asarray(spectrum, dtype=np.float64)), seed))
