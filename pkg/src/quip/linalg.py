"""Dense symmetric linear algebra and seeded structured-random primitives."""

import math
from dataclasses import dataclass

import numpy as np

from . import _rng
from ._errors import DataError, NumericalError
from ._validation import check_symmetric

PIVOT_RTOL = 1e-12


@dataclass
class LdlFactors:
    """``H = (u_strict + I) diag(d) (u_strict + I)^T`` with ``u_strict`` strictly upper."""

    u_strict: np.ndarray
    d: np.ndarray

    @property
    def unit(self):
        return self.u_strict + np.eye(len(self.d))

    def reconstruct(self):
        t = self.unit
        return (t * self.d) @ t.T


def ldl_decompose(h):
    """LDL factorization in the upper-triangular convention.

    Columns are eliminated from the last to the first (right-looking outer
    products).  A pivot below ``1e-12 * tr(H) / n`` is treated as exactly
    zero: its ``d`` entry and its column of ``u_strict`` are set to 0, which
    keeps semidefinite inputs well defined.
    """
    h = check_symmetric(h)
    n = h.shape[0]
    a = h.copy()
    u = np.zeros((n, n))
    d = np.zeros(n)
    tr = np.trace(h)
    threshold = PIVOT_RTOL * tr / n if tr > 0 else 0.0
    for k in range(n - 1, -1, -1):
        pivot = a[k, k]
        if pivot <= threshold:
            continue
        d[k] = pivot
        if k:
            col = a[:k, k] / pivot
            u[:k, k] = col
            a[:k, :k] -= np.outer(col, a[:k, k])
    return LdlFactors(u, d)


def _jacobi_eig(h, max_sweeps=100):
    a = h.copy()
    n = a.shape[0]
    q = np.eye(n)
    tol = 1e-12 * np.linalg.norm(h)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        # summing off-diagonal squares directly; total minus diagonal cancels
        off = np.sqrt(np.sum(a[offdiag] ** 2))
        if off <= tol:
            return q, np.diag(a).copy()
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) <= 1e-18 * (abs(a[p, p]) + abs(a[r, r])):
                    # negligible at double precision; also avoids overflow in theta
                    continue
                theta = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                ap, ar = a[:, p].copy(), a[:, r].copy()
                a[:, p] = c * ap - s * ar
                a[:, r] = s * ap + c * ar
                ap, ar = a[p, :].copy(), a[r, :].copy()
                a[p, :] = c * ap - s * ar
                a[r, :] = s * ap + c * ar
                qp, qr = q[:, p].copy(), q[:, r].copy()
                q[:, p] = c * qp - s * qr
                q[:, r] = s * qp + c * qr
    off = np.sqrt(np.sum(a[offdiag] ** 2))
    raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps",
                         off_diagonal=off, tolerance=tol)


def sym_eig(h, method="lapack"):
    """Eigendecomposition ``H = Q diag(lam) Q^T`` with ``lam`` sorted descending.

    ``method="jacobi"`` runs cyclic Jacobi rotations (off-diagonal threshold
    ``1e-12 * ||H||_F``, at most 100 sweeps); ``"lapack"`` defers to
    ``numpy.linalg.eigh``.
    """
    h = check_symmetric(h)
    if method == "jacobi":
        q, lam = _jacobi_eig(h)
    elif method == "lapack":
        try:
            lam, q = np.linalg.eigh(h)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigh failed: {exc}") from exc
    else:
        raise DataError(f"unknown eigensolver {method!r}")
    order = np.argsort(-lam, kind="stable")
    return q[:, order], lam[order]


def psd_sqrt(h):
    """Symmetric square root; negative eigenvalues are clipped to zero."""
    q, lam = sym_eig(h)
    root = (q * np.sqrt(np.clip(lam, 0.0, None))) @ q.T
    return 0.5 * (root + root.T)


def sample_haar_orthogonal(p, seed, stream=0):
    """Haar-distributed ``p x p`` orthogonal matrix.

    QR of a standard Gaussian matrix, with column ``j`` of Q multiplied by
    ``sign(R_jj)`` so the distribution is exactly uniform.
    """
    if int(p) < 1:
        raise DataError(f"orthogonal matrix size must be >= 1, got {p}")
    g = _rng.generator(seed, stream).standard_normal((p, p))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def kron_factor(n):
    """Divisor pair ``(p, q)``, ``p * q = n``, ``p >= q``, with ``|p - q|`` minimal.

    When ``q == 1`` the transform is a single dense factor of size ``n``.
    """
    if n < 1:
        raise DataError(f"dimension must be >= 1, got {n}")
    q = math.isqrt(n)
    while n % q:
        q -= 1
    return n // q, q


@dataclass
class KroneckerOrthogonal:
    """Orthogonal ``left ⊗ right`` applied without forming the dense product."""

    left: np.ndarray
    right: np.ndarray
    seed: int = 0

    @property
    def dim(self):
        return self.left.shape[0] * self.right.shape[0]

    @property
    def shapes(self):
        return (self.left.shape[0], self.right.shape[0])

    @property
    def dense_fallback(self):
        return self.right.shape[0] == 1

    @classmethod
    def from_seed(cls, dim, seed, streams=(_rng.U_LEFT, _rng.U_RIGHT)):
        p, q = kron_factor(dim)
        return cls(sample_haar_orthogonal(p, seed, streams[0]),
                   sample_haar_orthogonal(q, seed, streams[1]), seed)

    @classmethod
    def from_shapes(cls, shapes, seed, streams=(_rng.U_LEFT, _rng.U_RIGHT)):
        p, q = shapes
        return cls(sample_haar_orthogonal(p, seed, streams[0]),
                   sample_haar_orthogonal(q, seed, streams[1]), seed)

    def dense(self):
        return np.kron(self.left, self.right)


def kron_apply(k, x, side="left", transpose=False):
    """Multiply by ``K`` (or ``K^T``) on the given side of ``x``.

    ``side="left"`` returns ``op(K) @ x``; ``side="right"`` returns
    ``x @ op(K)``.  Each length-``dim`` vector is reshaped to ``p1 x p2`` and
    multiplied by the two small factors, ``O(dim * (p1 + p2))`` work.
    """
    if side not in ("left", "right"):
        raise DataError(f"side must be 'left' or 'right', got {side!r}")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None] if side == "left" else x[None, :]
    if side == "left":
        out = _kron_left(k, x, transpose)
    else:
        # x @ op(K) == (op(K)^T @ x^T)^T
        out = _kron_left(k, x.T, not transpose).T
    return out.ravel() if squeeze else out


def _kron_left(k, x, transpose):
    if x.shape[0] != k.dim:
        raise DataError(f"operand has {x.shape[0]} rows, transform dimension is {k.dim}")
    left, right = (k.left.T, k.right.T) if transpose else (k.left, k.right)
    p1, p2 = k.shapes
    xr = x.reshape(p1, p2, -1)
    y = np.tensordot(left, xr, axes=(1, 0))
    y = np.tensordot(right, y, axes=(1, 1)).transpose(1, 0, 2)
    return np.ascontiguousarray(y.reshape(k.dim, -1))


def random_permutation(n, seed, stream=0):
    if n < 1:
        raise DataError(f"permutation length must be >= 1, got {n}")
    return _rng.generator(seed, stream).permutation(n)


def apply_permutation(x, perm, axis=0):
    return np.take(x, perm, axis=axis)


def invert_permutation(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def generate_lowrank_psd(n, k, spectrum, seed, stream=0):
    """``Q diag(spectrum) Q^T`` using the first ``k`` columns of a Haar ``Q``.

    ``spectrum`` lists the ``k`` non-zero eigenvalues.  A length-``n``
    spectrum is accepted if exactly ``k`` entries are positive.
    """
    lam = np.asarray(spectrum, dtype=np.float64).ravel()
    if not 1 <= k <= n:
        raise DataError(f"rank {k} must lie in [1, {n}]")
    if len(lam) == n and n != k:
        lam = np.sort(lam)[::-1]
        if np.count_nonzero(lam > 0) != k:
            raise DataError("spectrum must contain exactly k positive entries")
        lam = lam[:k]
    if len(lam) != k or np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise DataError("spectrum must hold k positive finite eigenvalues")
    q = sample_haar_orthogonal(n, seed, stream)[:, :k]
    h = (q * lam) @ q.T
    return 0.5 * (h + h.T)


def random_psd(n, seed, samples=None, stream=0):
    """Full-rank PSD matrix ``X^T X / N`` from ``N`` standard Gaussian rows."""
    samples = 2 * n if samples is None else samples
    x = _rng.generator(seed, stream).standard_normal((samples, n))
    h = x.T @ x / samples
    return 0.5 * (h + h.T)

