import numpy as np
import pytest

from quip import DataError
from quip import _rng
from quip.incoherence import (
    conjugate,
    dequantize,
    mu_hessian,
    mu_weights,
    postprocess,
    preprocess,
    proxy_loss,
    quip,
)
from quip.linalg import (
    KroneckerOrthogonal,
    generate_lowrank_psd,
    kron_apply,
    ldl_decompose,
    psd_sqrt,
    random_psd,
    sample_haar_orthogonal,
)
from quip.rounding import q_near


def gaussian(m, n, seed):
    return np.random.default_rng(seed).standard_normal((m, n))


def test_one_hot_round_trip_fine_grid():
    # 4x4 permutation weights: every rotated entry is at most 1 = s / 1.2, so nothing clamps
    w = np.eye(4)[[2, 0, 3, 1]]
    wp, _, meta = preprocess(w, np.eye(4), bits=16, rho=2.4, alpha=0.0, seed=3)
    assert meta.clamp_count == 0
    assert np.linalg.norm(postprocess(wp, meta) - w) / np.linalg.norm(w) <= 1e-6
    # with rounding, each entry moves by at most half a grid step before the orthogonal maps
    half_step = meta.scale / (2 ** 16 - 1)
    out = postprocess(q_near(wp, 16), meta)
    assert np.linalg.norm(out - w) <= half_step * 4 * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_round_trip_without_rounding(seed):
    w = gaussian(24, 18, seed)
    h = random_psd(18, seed)
    wp, _, meta = preprocess(w, h, bits=16, rho=None, alpha=0.01, seed=seed)
    assert meta.clamp_count == 0
    assert np.linalg.norm(postprocess(wp, meta) - w) / np.linalg.norm(w) <= 1e-12


def test_preprocess_output_range_and_clamp_log():
    w = gaussian(32, 32, 1)
    wp, _, meta = preprocess(w, random_psd(32, 1), bits=3, seed=1)
    assert wp.min() >= 0 and wp.max() <= 7
    # recompute the unclamped image to count clamps independently
    _, _, free = preprocess(w, random_psd(32, 1), bits=3, rho=2.4, seed=1)
    assert free.clamp_count == meta.clamp_count > 0


def test_incoherence_off_is_affine():
    w = gaussian(6, 5, 2)
    wp, hp, meta = preprocess(w, np.eye(5), bits=8, rho=2.4, alpha=0.0, incoherence=False)
    s = 2.4 * np.linalg.norm(w) / np.sqrt(30)
    assert meta.scale == pytest.approx(s)
    assert np.array_equal(meta.d_tilde, np.ones(5))
    assert not meta.incoherence_enabled
    assert np.array_equal(hp, np.eye(5))
    ok = (wp > 0) & (wp < 255)
    back = postprocess(wp, meta)
    assert np.allclose(back[ok], w[ok], rtol=1e-12, atol=1e-12)


def test_preprocess_steps_against_dense_oracle():
    m, n, seed = 6, 8, 4
    w, h = gaussian(m, n, seed), random_psd(n, seed)
    wp, hp, meta = preprocess(w, h, bits=4, rho=1e6, alpha=0.1, seed=seed)
    hd = h + 0.1 * np.mean(np.diag(h)) * np.eye(n)
    d = (np.diag(hd) / np.sum(w * w, axis=0)) ** 0.25
    assert np.allclose(meta.d_tilde, d)
    u = KroneckerOrthogonal.from_shapes(meta.u_shapes, seed, (_rng.U_LEFT, _rng.U_RIGHT)).dense()
    v = KroneckerOrthogonal.from_shapes(meta.v_shapes, seed, (_rng.V_LEFT, _rng.V_RIGHT)).dense()
    w1 = (w * d)[meta.row_perm][:, meta.col_perm]
    h1 = (hd / np.outer(d, d))[np.ix_(meta.col_perm, meta.col_perm)]
    assert np.allclose(hp, v @ h1 @ v.T, atol=1e-12)
    w2 = u @ w1 @ v.T
    assert np.allclose(wp, 0.5 * (w2 / meta.scale + 1) * 15, atol=1e-12)


def test_orthogonal_step_preserves_proxy_form():
    n, m = 12, 9
    a = gaussian(m, n, 5)
    h = random_psd(n, 5)
    u = KroneckerOrthogonal.from_seed(m, 5)
    v = KroneckerOrthogonal.from_seed(n, 6)
    ua = kron_apply(v, kron_apply(u, a), "right", transpose=True)
    lhs = proxy_loss(np.zeros_like(ua), ua, conjugate(v, h))
    assert lhs == pytest.approx(proxy_loss(np.zeros_like(a), a, h), rel=1e-8)


def test_validation_errors():
    w, h = gaussian(4, 4, 0), np.eye(4)
    with pytest.raises(DataError):
        preprocess(w, h, alpha=-0.1)
    with pytest.raises(DataError):
        preprocess(w, h, rho=0.0)
    with pytest.raises(DataError):
        preprocess(w, np.eye(5))
    with pytest.raises(DataError):
        preprocess(np.zeros((4, 4)), h, incoherence=False)
    _, _, meta = preprocess(w, h)
    with pytest.raises(DataError):
        postprocess(np.zeros((3, 4)), meta)


def test_zero_column_warns():
    w = gaussian(4, 4, 1)
    w[:, 2] = 0.0
    with pytest.warns(RuntimeWarning, match="zero column"):
        _, _, meta = preprocess(w, np.eye(4))
    assert np.all(meta.d_tilde > 0)


def test_mu_hessian_cases():
    assert mu_hessian(np.eye(16)) == pytest.approx(4.0)
    h = random_psd(20, 1)
    assert mu_hessian(2 * h) == pytest.approx(mu_hessian(h), rel=1e-10)


def test_mu_hessian_haar_typical():
    n = 256
    mus = []
    for seed in range(10):
        q = sample_haar_orthogonal(n, seed)
        lam = np.linspace(2, 1, n)
        mus.append(mu_hessian((q * lam) @ q.T))
    assert np.median(mus) <= 6


def test_mu_weights_cases():
    assert mu_weights(np.full((3, 5), 2.0)) == pytest.approx(1.0)
    w = np.zeros((4, 6))
    w[1, 2] = 3.0
    assert mu_weights(w) == pytest.approx(np.sqrt(24))
    with pytest.raises(DataError):
        mu_weights(np.zeros((2, 2)))


def test_rotation_spreads_one_hot():
    ratios = []
    for n in (64, 256, 1024):
        m = 16
        w = np.zeros((m, n))
        w[0, 0] = 1.0
        u = KroneckerOrthogonal.from_seed(m, n)
        v = KroneckerOrthogonal.from_seed(n, n + 1)
        rotated = kron_apply(v, kron_apply(u, w), "right", transpose=True)
        assert mu_weights(rotated) <= mu_weights(w)
        ratios.append(mu_weights(rotated) / np.sqrt(m * n))
    assert ratios[0] > ratios[1] > ratios[2]


def test_quip_near_off_is_scaled_nearest():
    w, h = gaussian(8, 6, 3), random_psd(6, 3)
    res = quip(w, h, bits=3, method="near", incoherence=False, alpha=0.0)
    s = 2.4 * np.linalg.norm(w) / np.sqrt(48)
    codes = q_near(np.clip(0.5 * (w / s + 1) * 7, 0, 7), 3)
    assert np.array_equal(res.layer.codes, codes)
    assert np.allclose(res.w_hat, s * (codes / 7 * 2 - 1))


def test_incoherence_helps_at_two_bits():
    wins = 0
    for seed in range(20):
        w = gaussian(64, 64, seed)
        h = generate_lowrank_psd(64, 8, np.geomspace(4, 0.1, 8), seed)
        on = quip(w, h, bits=2, seed=seed).report.proxy_loss_raw
        off = quip(w, h, bits=2, seed=seed, incoherence=False).report.proxy_loss_raw
        wins += on <= off
    assert wins > 10


@pytest.mark.parametrize("method", ["ldlq", "ldlq_rg", "greedy", "near", "stoch"])
def test_fine_grid_any_method(method):
    w, h = gaussian(32, 24, 7), random_psd(24, 7)
    res = quip(w, h, bits=16, method=method, rho=None, passes=2)
    assert np.linalg.norm(res.w_hat - w) / np.linalg.norm(w) <= 1e-3


def test_quip_deterministic_and_report():
    w, h = gaussian(16, 12, 8), random_psd(12, 8)
    a = quip(w, h, bits=3, seed=4)
    b = quip(w, h, bits=3, seed=4)
    assert a.layer == b.layer and np.array_equal(a.w_hat, b.w_hat)
    r = a.report
    assert r.proxy_loss >= 0 and r.trace_d <= r.trace_h + 1e-9
    assert r.proxy_loss == pytest.approx(proxy_loss(w, a.w_hat, h + 0.01 * np.mean(np.diag(h)) * np.eye(12)))
    assert r.proxy_loss_raw == pytest.approx(proxy_loss(w, a.w_hat, h))
    assert np.array_equal(dequantize(a.layer), a.w_hat)


def test_quip_bad_method():
    with pytest.raises(DataError):
        quip(gaussian(4, 4, 0), np.eye(4), method="admm")


@pytest.mark.parametrize("n,rank", [(64, 4), (64, 64), (256, 16)])
def test_trace_bound_after_rotation(n, rank):
    h = np.diag(np.concatenate([np.geomspace(5, 0.1, rank), np.zeros(n - rank)]))
    hv = conjugate(KroneckerOrthogonal.from_seed(n, rank), h)
    mu = mu_hessian(hv)
    assert np.sum(ldl_decompose(hv).d) <= mu ** 2 / n * np.trace(psd_sqrt(hv)) ** 2 * (1 + 1e-9)


def test_diagonal_hessian_trace_d_equals_trace_h():
    h = np.diag(np.random.default_rng(9).uniform(0.1, 3.0, 50))
    assert np.sum(ldl_decompose(h).d) == pytest.approx(np.trace(h), rel=1e-15)
