"""Adaptive rounding with linear feedback and incoherence processing."""

from ._errors import DataError, FormatError, IoError, NumericalError, QuipError
from ._types import HessianStats, IncoherenceMeta, LossReport, QuantizedLayer
from .analysis import (
    audit_trace_bound,
    estimate_avg_loss,
    hessian_stats,
    make_counterexample,
    worst_case_weights,
)
from .clamp_safe import ConstrainedFactor, quantize_clamp_safe, solve_constrained
from .estimator import QuantizedLinear
from .incoherence import (
    dequantize,
    mu_hessian,
    mu_weights,
    postprocess,
    preprocess,
    proxy_loss,
    quip,
)
from .linalg import (
    KroneckerOrthogonal,
    LdlFactors,
    generate_lowrank_psd,
    kron_apply,
    ldl_decompose,
    psd_sqrt,
    sample_haar_orthogonal,
    sym_eig,
)
from .matio import (
    hessian_from_calibration,
    read_matrix,
    read_quantized,
    write_matrix,
    write_quantized,
)
from .rounding import (
    RoundingConfig,
    greedy,
    greedy_pass,
    ldlq,
    ldlq_rg,
    optq_reference,
    q_near,
    q_stoch,
    round_with_linear_feedback,
)

__version__ = "0.1.0"
