import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from quip import DataError, QuantizedLinear, dequantize, quip
from quip.linalg import random_psd


@pytest.fixture
def layer():
    rng = np.random.default_rng(0)
    return rng.standard_normal((12, 16)), rng.standard_normal((200, 16))


def test_params_and_clone(layer):
    w, _ = layer
    est = QuantizedLinear(weights=w, bits=3, seed=5)
    params = est.get_params()
    assert params["bits"] == 3 and params["seed"] == 5 and params["method"] == "ldlq"
    twin = clone(est).set_params(bits=2)
    assert twin.bits == 2 and est.bits == 3
    assert np.array_equal(twin.weights, w)


def test_fit_from_inputs_matches_library(layer):
    w, x = layer
    est = QuantizedLinear(weights=w, bits=3, seed=2).fit(x)
    h = x.T @ x / x.shape[0]
    ref = quip(w, h, bits=3, seed=2)
    assert est.layer_ == ref.layer
    assert np.array_equal(est.weights_hat_, ref.w_hat)
    assert np.array_equal(est.dequantize(), dequantize(ref.layer))
    assert est.n_features_in_ == 16 and est.codes().dtype == np.uint16


def test_fit_with_hessian_transform_score(layer):
    w, x = layer
    h = random_psd(16, 3)
    est = QuantizedLinear(weights=w, bits=4, method="greedy", passes=2).fit(hessian=h)
    out = est.transform(x)
    assert out.shape == (200, 12)
    assert np.allclose(out, x @ est.weights_hat_.T)
    e = est.weights_hat_ - w
    assert est.score() == pytest.approx(-np.trace(e @ h @ e.T))
    assert est.score(x) <= 0


def test_errors(layer):
    w, x = layer
    with pytest.raises(DataError):
        QuantizedLinear().fit(x)
    with pytest.raises(DataError):
        QuantizedLinear(weights=w).fit()
    with pytest.raises(NotFittedError):
        QuantizedLinear(weights=w).transform(x)
    est = QuantizedLinear(weights=w).fit(x)
    with pytest.raises(DataError):
        est.transform(x[:, :5])
