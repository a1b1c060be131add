import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quip import DataError
from quip.linalg import (
    KroneckerOrthogonal,
    apply_permutation,
    generate_lowrank_psd,
    invert_permutation,
    kron_apply,
    kron_factor,
    ldl_decompose,
    psd_sqrt,
    random_permutation,
    random_psd,
    sample_haar_orthogonal,
    sym_eig,
)


def test_ldl_identity():
    f = ldl_decompose(np.eye(3))
    assert np.array_equal(f.u_strict, np.zeros((3, 3)))
    assert np.array_equal(f.d, np.ones(3))


def test_ldl_two_by_two():
    h = np.array([[2.0, 1.0], [1.0, 2.0]])
    f = ldl_decompose(h)
    assert np.allclose(f.d, [1.5, 2.0], rtol=0, atol=1e-15)
    assert f.u_strict[0, 1] == pytest.approx(0.5)
    # oracle: multiply the factors back
    t = np.eye(2) + f.u_strict
    assert np.allclose(t @ np.diag(f.d) @ t.T, h, atol=1e-15)


def test_ldl_diagonal():
    d = np.array([3.0, 0.5, 7.0, 2.0])
    f = ldl_decompose(np.diag(d))
    assert np.array_equal(f.u_strict, np.zeros((4, 4)))
    assert np.array_equal(f.d, d)


@pytest.mark.parametrize("rank", [1, 5, 20])
def test_ldl_reconstruction(rank):
    h = generate_lowrank_psd(20, rank, np.linspace(3, 1, rank), seed=rank)
    f = ldl_decompose(h)
    assert np.linalg.norm(f.reconstruct() - h) <= 1e-8 * np.linalg.norm(h)
    assert np.array_equal(np.tril(f.u_strict), np.zeros((20, 20)))
    assert np.all(f.d >= -1e-10 * np.trace(h) / 20)


def test_ldl_asymmetric():
    with pytest.raises(DataError):
        ldl_decompose(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("seed", range(10))
def test_trace_d_strictly_below_trace_h(seed):
    h = random_psd(12, seed)
    assert np.sum(ldl_decompose(h).d) < np.trace(h)


def test_sym_eig_diagonal():
    q, lam = sym_eig(np.diag([3.0, 1.0]))
    assert np.allclose(lam, [3, 1])
    assert np.allclose(np.abs(q), np.eye(2))


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_sym_eig_two_by_two(method):
    _, lam = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]), method)
    # characteristic polynomial x^2 - 4x + 3
    assert np.allclose(lam, np.sort(np.roots([1, -4, 3]))[::-1], atol=1e-12)


def test_sym_eig_rank_one():
    v = np.array([1.0, 2.0, -2.0])
    _, lam = sym_eig(np.outer(v, v))
    assert lam[0] == pytest.approx(9.0)
    assert np.allclose(lam[1:], 0, atol=1e-12)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_sym_eig_reconstruction(method):
    h = random_psd(16, 3)
    q, lam = sym_eig(h, method)
    assert np.linalg.norm((q * lam) @ q.T - h) <= 1e-8 * np.linalg.norm(h)
    assert np.linalg.norm(q.T @ q - np.eye(16)) <= 1e-10
    assert np.all(np.diff(lam) <= 0)


def test_jacobi_matches_lapack():
    h = random_psd(10, 4)
    assert np.allclose(sym_eig(h, "jacobi")[1], sym_eig(h, "lapack")[1], rtol=1e-10)


def test_sym_eig_unknown_method():
    with pytest.raises(DataError):
        sym_eig(np.eye(2), "power")


def test_psd_sqrt_cases():
    assert np.allclose(psd_sqrt(4 * np.eye(3)), 2 * np.eye(3))
    assert np.allclose(psd_sqrt(np.diag([9.0, 1.0])), np.diag([3.0, 1.0]))
    h = random_psd(12, 5)
    r = psd_sqrt(h)
    assert np.linalg.norm(r @ r - h) <= 1e-7 * np.linalg.norm(h)


def test_psd_sqrt_clips_negative():
    r = psd_sqrt(np.diag([4.0, -1e-14]))
    assert np.allclose(r, np.diag([2.0, 0.0]))


def test_haar_basics():
    q1 = sample_haar_orthogonal(1, 9)
    assert q1.shape == (1, 1) and abs(q1[0, 0]) == 1.0
    a, b = sample_haar_orthogonal(20, 7), sample_haar_orthogonal(20, 7)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a.T @ a - np.eye(20)) <= 1e-10 * 20
    with pytest.raises(DataError):
        sample_haar_orthogonal(0, 1)


def test_haar_second_moment():
    # E[Q00^2] = 1/p for Haar measure
    p, n = 64, 1000
    x = np.array([sample_haar_orthogonal(p, s)[0, 0] ** 2 for s in range(n)])
    se = x.std(ddof=1) / np.sqrt(n)
    assert abs(x.mean() - 1 / p) <= 3 * se


@pytest.mark.parametrize("n,expected", [(1, (1, 1)), (12, (4, 3)), (7, (7, 1)), (1024, (32, 32)), (96, (12, 8))])
def test_kron_factor(n, expected):
    assert kron_factor(n) == expected


def test_kron_identity():
    k = KroneckerOrthogonal(np.eye(3), np.eye(2))
    x = np.random.default_rng(0).standard_normal((6, 4))
    assert np.array_equal(kron_apply(k, x), x)


@pytest.mark.parametrize("dim", range(1, 65))
def test_kron_matches_dense(dim):
    k = KroneckerOrthogonal.from_seed(dim, dim)
    dense = k.dense()
    rng = np.random.default_rng(dim)
    x = rng.standard_normal((dim, 3))
    y = rng.standard_normal((3, dim))
    for transpose, op in ((False, dense), (True, dense.T)):
        assert np.allclose(kron_apply(k, x, "left", transpose), op @ x, rtol=1e-10, atol=1e-12)
        assert np.allclose(kron_apply(k, y, "right", transpose), y @ op, rtol=1e-10, atol=1e-12)


def test_kron_two_by_two_dense():
    k = KroneckerOrthogonal(sample_haar_orthogonal(2, 1), sample_haar_orthogonal(2, 2))
    x = np.random.default_rng(3).standard_normal(4)
    assert np.allclose(kron_apply(k, x), np.kron(k.left, k.right) @ x, atol=1e-14)


def test_kron_inverse_and_mismatch():
    k = KroneckerOrthogonal.from_seed(12, 4)
    x = np.random.default_rng(4).standard_normal((12, 5))
    back = kron_apply(k, kron_apply(k, x), transpose=True)
    assert np.allclose(back, x, atol=1e-10)
    with pytest.raises(DataError):
        kron_apply(k, np.zeros((5, 5)))
    with pytest.raises(DataError):
        kron_apply(k, x, side="middle")


def test_kron_dense_fallback_for_prime():
    k = KroneckerOrthogonal.from_seed(37, 0)
    assert k.dense_fallback and k.shapes == (37, 1)


def test_permutations():
    assert np.array_equal(random_permutation(1, 5), [0])
    p = random_permutation(50, 3)
    assert np.array_equal(p, random_permutation(50, 3))
    assert np.array_equal(np.sort(p), np.arange(50))
    x = np.random.default_rng(5).standard_normal((50, 2))
    assert np.array_equal(apply_permutation(apply_permutation(x, p), invert_permutation(p)), x)
    with pytest.raises(DataError):
        random_permutation(0, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**64 - 1))
def test_permutation_inverse_property(n, seed):
    p = random_permutation(n, seed)
    assert np.array_equal(p[invert_permutation(p)], np.arange(n))


def test_lowrank_generator():
    assert np.allclose(generate_lowrank_psd(8, 8, np.ones(8), 1), np.eye(8), atol=1e-10)
    h = generate_lowrank_psd(10, 1, [5.0], 2)
    assert np.trace(h) == pytest.approx(5.0)
    assert np.linalg.matrix_rank(h, tol=1e-8) == 1
    spectrum = np.array([4.0, 2.0, 1.0, 0.5])
    _, lam = sym_eig(generate_lowrank_psd(30, 4, spectrum, 3))
    assert np.allclose(lam[:4], spectrum, atol=1e-8)
    assert np.allclose(lam[4:], 0, atol=1e-8)


def test_lowrank_generator_errors():
    with pytest.raises(DataError):
        generate_lowrank_psd(4, 5, np.ones(5), 0)
    with pytest.raises(DataError):
        generate_lowrank_psd(4, 2, [1.0, -1.0], 0)
    # a length-n spectrum with k positive entries is accepted
    h = generate_lowrank_psd(4, 2, [1.0, 0.0, 3.0, 0.0], 0)
    assert np.trace(h) == pytest.approx(4.0)
