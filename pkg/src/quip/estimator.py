"""scikit-learn style wrapper around :func:`quip.incoherence.quip`."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._errors import DataError
from ._validation import as_matrix
from .incoherence import DEFAULT_ALPHA, DEFAULT_RHO, dequantize, proxy_loss, quip
from .matio import hessian_from_calibration


class QuantizedLinear(BaseEstimator, TransformerMixin):
    """Quantize a linear layer ``x -> W x`` from calibration inputs.

    ``fit`` takes the calibration inputs ``X`` (rows are input vectors) and
    forms ``H = X^T X / N``; pass ``hessian=`` to supply ``H`` directly.
    ``transform`` applies the de-quantized layer, ``X @ W_hat^T``.

    Attributes set by ``fit``: ``layer_`` (codes and metadata),
    ``weights_hat_``, ``hessian_``, ``report_`` and ``n_features_in_``.
    """

    def __init__(self, weights=None, bits=4, method="ldlq", incoherence=True, rho=DEFAULT_RHO,
                 alpha=DEFAULT_ALPHA, seed=0, passes=10, subroutine="nearest", threads=1):
        self.weights = weights
        self.bits = bits
        self.method = method
        self.incoherence = incoherence
        self.rho = rho
        self.alpha = alpha
        self.seed = seed
        self.passes = passes
        self.subroutine = subroutine
        self.threads = threads

    def fit(self, X=None, y=None, hessian=None):
        if self.weights is None:
            raise DataError("set `weights` before calling fit")
        if hessian is None:
            if X is None:
                raise DataError("fit needs calibration inputs X or hessian=")
            hessian = hessian_from_calibration(X)
        w = as_matrix(self.weights, "weights")
        res = quip(w, hessian, bits=self.bits, method=self.method, incoherence=self.incoherence,
                   rho=self.rho, alpha=self.alpha, seed=self.seed, passes=self.passes,
                   subroutine=self.subroutine, threads=self.threads)
        self.layer_ = res.layer
        self.weights_hat_ = res.w_hat
        self.report_ = res.report
        self.hessian_ = as_matrix(hessian, "hessian")
        self.n_features_in_ = w.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_hat_")
        x = as_matrix(X, "X")
        if x.shape[1] != self.n_features_in_:
            raise DataError(f"X has {x.shape[1]} features, layer expects {self.n_features_in_}")
        return x @ self.weights_hat_.T

    def score(self, X=None, y=None):
        """Negative proxy loss, on ``X``'s second moment or the fitted Hessian."""
        check_is_fitted(self, "weights_hat_")
        h = self.hessian_ if X is None else hessian_from_calibration(X)
        return -proxy_loss(self.weights, self.weights_hat_, h)

    def dequantize(self):
        check_is_fitted(self, "layer_")
        return dequantize(self.layer_)

    def codes(self):
        check_is_fitted(self, "layer_")
        return np.array(self.layer_.codes)
