import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oscar.errors import NonConvergence, NonFinite, NotPositiveDefinite
from oscar.numerics import (
    as_symmetric,
    cholesky,
    cholesky_logdet,
    finite_diff_grad,
    psd_inverse,
    spd_inverse,
    sym_eig,
)


def random_spd(rng, n, shift=0.5):
    a = rng.standard_normal((n, n))
    return a @ a.T + shift * np.eye(n)


def random_sym(rng, n):
    a = rng.standard_normal((n, n))
    return (a + a.T) / 2


# cholesky_logdet


def test_logdet_identity():
    assert cholesky_logdet(np.eye(2)) == 0.0


def test_logdet_diag_two():
    assert cholesky_logdet(np.diag([2.0, 2.0])) == pytest.approx(2 * np.log(2), abs=1e-12)


def test_logdet_matches_eigenvalues():
    a = random_spd(np.random.default_rng(1), 5)
    lam = sym_eig(a).eigenvalues
    assert abs(cholesky_logdet(a) - np.sum(np.log(lam))) <= 1e-10


def test_cholesky_factor_reconstructs():
    a = random_spd(np.random.default_rng(2), 7)
    lower = cholesky(a)
    assert np.allclose(np.triu(lower, 1), 0.0)
    assert np.allclose(lower @ lower.T, a, atol=1e-12)


def test_not_pd_reports_pivot():
    with pytest.raises(NotPositiveDefinite) as info:
        cholesky_logdet(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.pivot_index == 1
    assert info.value.pivot_value < 0


def test_zero_pivot_hits_floor():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.zeros((2, 2)))


def test_asymmetric_input_rejected():
    with pytest.raises(ValueError):
        as_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))


# psd_inverse


def test_psd_inverse_zero_matrix():
    assert np.allclose(psd_inverse(np.zeros((2, 2)), 1.0), np.eye(2), atol=1e-15)


def test_psd_inverse_diag():
    assert np.allclose(psd_inverse(np.diag([3.0, 3.0, 3.0]), 1.0), np.eye(3) / 4, atol=1e-15)


def test_psd_inverse_closed_form_2x2():
    a = np.array([[1.0, 0.9], [0.9, 1.0]])
    r = 1e-3
    p, q = 1.0 + r, 0.9
    det = p * p - q * q
    expected = np.array([[p, -q], [-q, p]]) / det
    assert np.max(np.abs(psd_inverse(a, r) - expected)) <= 1e-9 * np.max(np.abs(expected))


def test_psd_inverse_symmetric_output():
    inv = psd_inverse(random_spd(np.random.default_rng(3), 6, 0.0), 1e-3)
    assert np.array_equal(inv, inv.T)


def test_spd_inverse_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        spd_inverse(np.diag([1.0, -1.0]))


# sym_eig


def test_eig_diag():
    assert np.allclose(sym_eig(np.diag([3.0, 1.0])).eigenvalues, [3.0, 1.0])


def test_eig_swap():
    assert np.allclose(sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]])).eigenvalues, [1.0, -1.0], atol=1e-15)


def test_eig_trace_6x6():
    a = random_sym(np.random.default_rng(4), 6)
    assert abs(np.sum(sym_eig(a).eigenvalues) - np.trace(a)) <= 1e-10


def test_eig_one_by_one():
    dec = sym_eig(np.array([[2.5]]))
    assert dec.eigenvalues.tolist() == [2.5]
    assert dec.eigenvectors.tolist() == [[1.0]]


def test_eig_sweep_cap():
    a = random_sym(np.random.default_rng(5), 8)
    with pytest.raises(NonConvergence) as info:
        sym_eig(a, max_sweeps=1)
    assert info.value.residual > 0


def test_eig_is_deterministic():
    a = random_sym(np.random.default_rng(6), 9)
    d1, d2 = sym_eig(a), sym_eig(a)
    assert np.array_equal(d1.eigenvalues, d2.eigenvalues)
    assert np.array_equal(d1.eigenvectors, d2.eigenvectors)


def test_eig_agrees_with_lapack():
    a = random_sym(np.random.default_rng(7), 12)
    assert np.allclose(sym_eig(a).eigenvalues, np.linalg.eigvalsh(a)[::-1], atol=1e-12)


@given(n=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_eig_reconstruction_property(n, seed):
    a = random_sym(np.random.default_rng(seed), n)
    dec = sym_eig(a)
    q = dec.eigenvectors
    scale = max(np.linalg.norm(a), 1e-300)
    assert np.linalg.norm(dec.reconstruct() - a) / scale <= 1e-8
    assert np.linalg.norm(q.T @ q - np.eye(n)) <= 1e-8
    assert np.all(np.diff(dec.eigenvalues) <= 0)
    assert abs(np.sum(dec.eigenvalues) - np.trace(a)) <= 1e-10 * max(1.0, np.abs(a).sum())


@given(n=st.integers(1, 10), seed=st.integers(0, 2**31))
def test_logdet_property(n, seed):
    a = random_spd(np.random.default_rng(seed), n)
    ref = np.sum(np.log(sym_eig(a).eigenvalues))
    assert abs(cholesky_logdet(a) - ref) <= 1e-9 * max(1.0, abs(ref))


@given(n=st.integers(1, 10), seed=st.integers(0, 2**31), ridge=st.floats(1e-3, 10.0))
def test_psd_inverse_property(n, seed, ridge):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, max(1, n // 2)))
    a = z @ z.T  # PSD, possibly singular
    inv = psd_inverse(a, ridge)
    assert np.linalg.norm((a + ridge * np.eye(n)) @ inv - np.eye(n)) <= 1e-8


# finite_diff_grad


def test_fd_quadratic():
    g = finite_diff_grad(lambda x: 0.5 * float(x @ x), np.array([1.0, 2.0]))
    assert np.allclose(g, [1.0, 2.0], atol=1e-8)


def test_fd_constant():
    assert np.array_equal(finite_diff_grad(lambda x: 3.0, np.zeros(4)), np.zeros(4))


def test_fd_preserves_shape():
    x = np.arange(6.0).reshape(3, 2)
    g = finite_diff_grad(lambda y: float(np.sum(y**2)), x)
    assert g.shape == (3, 2)
    assert np.allclose(g, 2 * x, rtol=1e-8)


def test_fd_non_finite():
    with pytest.raises(NonFinite):
        finite_diff_grad(lambda x: float("nan"), np.zeros(2))
