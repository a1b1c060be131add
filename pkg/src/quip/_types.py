"""Data carriers shared between the pipeline and the file formats."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class IncoherenceMeta:
    """Everything needed to map grid codes back to real weights.

    ``u_shapes`` and ``v_shapes`` are the Kronecker factor sizes of the
    left (m-side) and right (n-side) orthogonal transforms.  A shape of
    ``(0, 0)`` means the identity transform (incoherence processing off).

    ``rho`` and ``clamp_count`` are bookkeeping only; the dequantization map
    does not use them and the QZ file does not store them.
    """

    seed: int
    bits: int
    alpha: float
    scale: float
    d_tilde: np.ndarray
    u_shapes: tuple
    v_shapes: tuple
    row_perm: np.ndarray
    col_perm: np.ndarray
    rho: float = float("nan")
    clamp_count: int = 0

    @property
    def incoherence_enabled(self):
        return tuple(self.u_shapes) != (0, 0)

    @property
    def shape(self):
        return (len(self.row_perm), len(self.col_perm))

    def __eq__(self, other):
        if not isinstance(other, IncoherenceMeta):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.bits == other.bits
            and self.alpha == other.alpha
            and self.scale == other.scale
            and tuple(self.u_shapes) == tuple(other.u_shapes)
            and tuple(self.v_shapes) == tuple(other.v_shapes)
            and np.array_equal(self.d_tilde, other.d_tilde)
            and np.array_equal(self.row_perm, other.row_perm)
            and np.array_equal(self.col_perm, other.col_perm)
        )


@dataclass(eq=False)
class QuantizedLayer:
    """Integer codes on the grid {0..2^b-1} plus the metadata to decode them."""

    codes: np.ndarray
    meta: IncoherenceMeta = field(repr=False)

    @property
    def bits(self):
        return self.meta.bits

    @property
    def shape(self):
        return self.codes.shape

    def __eq__(self, other):
        if not isinstance(other, QuantizedLayer):
            return NotImplemented
        return np.array_equal(self.codes, other.codes) and self.meta == other.meta


@dataclass
class LossReport:
    """Outcome of one quantization run.

    ``proxy_loss`` is measured against the damped Hessian and
    ``proxy_loss_raw`` against the Hessian as given.  ``trace_d``,
    ``trace_h`` and ``mu_h`` describe the processed Hessian the rounding
    actually saw.
    """

    proxy_loss: float
    proxy_loss_raw: float
    trace_d: float
    trace_h: float
    mu_h: float
    mu_w: float
    clamp_count: int
    method: str
    bits: int
    seed: int

    def items(self):
        return [
            ("method", self.method),
            ("bits", self.bits),
            ("seed", self.seed),
            ("proxy_loss", self.proxy_loss),
            ("proxy_loss_raw", self.proxy_loss_raw),
            ("trace_d", self.trace_d),
            ("trace_h", self.trace_h),
            ("mu_h", self.mu_h),
            ("mu_w", self.mu_w),
            ("clamp_count", self.clamp_count),
        ]


@dataclass
class HessianStats:
    frac_rank_abs: float
    frac_rank_approx: float
    trace_ratio: float
    n: int = 0

    def items(self):
        return [
            ("n", self.n),
            ("frac_rank_abs", self.frac_rank_abs),
            ("frac_rank_approx", self.frac_rank_approx),
            ("trace_ratio", self.trace_ratio),
        ]


def format_kv(items):
    """One ``key=value`` per line; floats use ``repr`` so they round-trip."""
    return "\n".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in items)


def format_human(items):
    width = max(len(k) for k, _ in items)
    lines = []
    for k, v in items:
        shown = f"{v:.6g}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {shown}")
    return "\n".join(lines)
