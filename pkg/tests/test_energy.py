import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from oscar.energy import EnergyConfig, energy_grad, gram, leverage_weights, set_energy
from oscar.errors import ConfigError
from oscar.numerics import finite_diff_grad, sym_eig

TINY = EnergyConfig(eps=1e-14, alpha=0.0)

feature_sets = st.integers(1, 6).flatmap(
    lambda m: st.integers(1, 4).flatmap(
        lambda d: arrays(np.float64, (m, d), elements=st.floats(-2, 2, allow_subnormal=False))
    )
)


def test_gram_trivial_cases():
    np.testing.assert_array_equal(gram(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(gram([[1.0, 0.0], [1.0, 0.0]]), np.ones((2, 2)))


def test_gram_matches_dot_products():
    z = np.random.default_rng(0).standard_normal((5, 3))
    k = gram(z)
    ref = np.array([[sum(z[i, a] * z[j, a] for a in range(3)) for j in range(5)] for i in range(5)])
    np.testing.assert_allclose(k, ref, atol=1e-14)
    assert np.array_equal(k, k.T)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_leverage_identity_gram(alpha):
    cfg = EnergyConfig(alpha=alpha)
    s, w = leverage_weights(np.eye(4), cfg)
    np.testing.assert_allclose(s, 1.0 / (1.0 + 1e-3), rtol=1e-14)
    np.testing.assert_allclose(w, 0.25, rtol=1e-14)


def test_leverage_alpha_zero_uniform():
    z = np.random.default_rng(1).standard_normal((5, 3))
    _, w = leverage_weights(gram(z), EnergyConfig(alpha=0.0))
    np.testing.assert_array_equal(w, np.full(5, 0.2))


def _pair_example():
    # z1 = z2 = e1, z3 = e2: K = [[1,1,0],[1,1,0],[0,0,1]]
    k = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return k, leverage_weights(k, EnergyConfig(eps=1e-3, alpha=0.5, ridge=1e-3))


def test_leverage_duplicate_pair_exact_values():
    eps = 1e-3
    # inverse of [[a,b],[b,a]] has diagonal a / (a^2 - b^2)
    a, b = 1.0 + eps, 1.0
    s_dup = a / (a * a - b * b)
    s_ref = np.array([s_dup, s_dup, 1.0 / (1.0 + eps)])
    w_ref = np.sqrt(s_ref) / np.sqrt(s_ref).sum()
    _, (s, w) = _pair_example()
    np.testing.assert_allclose(s, s_ref, rtol=1e-10)
    np.testing.assert_allclose(w, w_ref, rtol=1e-10)
    assert w[0] == w[1]


def test_leverage_duplicate_pair_isolated_row_weighted_highest():
    _, (_, w) = _pair_example()
    assert w[2] > w[0] == w[1], w


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_leverage_is_inverse_residual(m, d, seed):
    # Schur complement: [(K + r I)^-1]_ii = 1 / (r + |z_i|^2 - z_i^T Z_o^T (K_o + r I)^-1 Z_o z_i)
    ridge = 0.1
    z = np.random.default_rng(seed).standard_normal((m, d))
    s, _ = leverage_weights(gram(z), EnergyConfig(alpha=0.5, ridge=ridge))
    for i in range(m):
        zo = np.delete(z, i, axis=0)
        proj = zo @ z[i]
        resid = z[i] @ z[i] - proj @ np.linalg.solve(zo @ zo.T + ridge * np.eye(m - 1), proj)
        assert s[i] == pytest.approx(1.0 / (ridge + resid), rel=1e-9)


def test_single_feature_energy():
    rep = set_energy([[1.0, 0.0]], TINY)
    assert rep.energy == pytest.approx(-0.5 * np.log(2.0), abs=1e-12)


def test_orthonormal_beats_duplicates_with_unit_weights():
    ones = np.ones(2)
    e_orth = set_energy(np.eye(2), TINY, weights=ones).energy
    e_dup = set_energy([[1.0, 0.0], [1.0, 0.0]], TINY, weights=ones).energy
    assert e_orth == pytest.approx(-np.log(2.0), abs=1e-12)
    assert e_dup == pytest.approx(-0.5 * np.log(3.0), abs=1e-12)
    assert e_orth < e_dup


def test_orthonormal_beats_duplicates_with_normalised_weights():
    # alpha = 0 weights are 1/m, so the Gram entering the log-det is K / 2
    e_orth = set_energy(np.eye(2), TINY).energy
    e_dup = set_energy([[1.0, 0.0], [1.0, 0.0]], TINY).energy
    assert e_orth == pytest.approx(-np.log(1.5), abs=1e-12)
    assert e_dup == pytest.approx(-0.5 * np.log(2.0), abs=1e-12)
    assert e_orth < e_dup


def test_energy_matches_eigen_oracle():
    z = np.random.default_rng(2).standard_normal((6, 4))
    cfg = EnergyConfig(tau=0.7)
    rep = set_energy(z, cfg)
    r = np.sqrt(rep.weights)
    kt = r[:, None] * (z @ z.T) * r[None, :]
    lam = sym_eig(0.5 * (kt + kt.T)).eigenvalues
    ref = -0.5 * np.sum(np.log1p(cfg.tau * lam + rep.eps_tr))
    assert rep.energy == pytest.approx(ref, abs=1e-12)
    np.testing.assert_allclose(rep.eps_tr, cfg.eps * np.trace(kt) / 6, rtol=1e-14)


def test_spectrum_reported():
    rep = set_energy(np.random.default_rng(3).standard_normal((4, 2)), EnergyConfig(), spectrum=True)
    assert rep.gram_spectrum.shape == (4,)
    assert rep.volume_log == pytest.approx(0.5 * np.sum(np.log(rep.gram_spectrum)), abs=1e-12)


def test_config_validation():
    for bad in (dict(tau=0), dict(eps=-1), dict(alpha=1.5), dict(ridge=0)):
        with pytest.raises(ConfigError):
            EnergyConfig(**bad)


def test_gradient_trivial_cases():
    assert np.all(energy_grad(np.zeros((3, 2)), EnergyConfig()) == 0)
    z = np.array([[0.6, 0.8]])
    np.testing.assert_allclose(energy_grad(z, TINY), -z / 2, atol=1e-12)


@pytest.mark.parametrize("freeze_w,freeze_eps", [(True, True), (True, False), (False, True), (False, False)])
def test_gradient_matches_fd(freeze_w, freeze_eps):
    cfg = EnergyConfig(tau=1.3, eps=0.05, alpha=0.5, freeze_weights=freeze_w, freeze_stabilizer=freeze_eps)
    z = np.random.default_rng(4).standard_normal((5, 3))
    rep = set_energy(z, cfg)
    w = rep.weights if freeze_w else None
    e = rep.eps_tr if freeze_eps else None
    fd = finite_diff_grad(lambda y: set_energy(y, cfg, weights=w, eps_tr=e).energy, z, h=1e-6)
    g = energy_grad(z, cfg)
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


@given(feature_sets)
def test_volume_identity_exact(z):
    rep = set_energy(z, EnergyConfig())
    assert rep.energy == -rep.volume_log


@given(feature_sets, st.floats(0, 1))
def test_weights_normalised(z, alpha):
    _, w = leverage_weights(gram(z), EnergyConfig(alpha=alpha))
    assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w >= 0)


@given(feature_sets, st.randoms(use_true_random=False))
def test_permutation_invariance(z, rnd):
    perm = list(range(len(z)))
    rnd.shuffle(perm)
    cfg = EnergyConfig()
    assert set_energy(z[perm], cfg).energy == pytest.approx(set_energy(z, cfg).energy, abs=1e-12)


@given(st.integers(2, 5), st.floats(0.2, 3.0), st.integers(0, 10_000))
def test_spreading_a_duplicate_lowers_energy(m, scale, seed):
    # m-1 orthogonal rows plus a copy of the first; the copy is then replaced by
    # a same-norm vector orthogonal to every row
    d = m + 1
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    rows = scale * q[: m - 1]
    dup = np.vstack([rows, rows[:1]])
    spread = np.vstack([rows, scale * q[m - 1 : m]])
    for alpha in (0.0, 0.5):
        cfg = EnergyConfig(alpha=alpha)
        assert set_energy(spread, cfg).energy <= set_energy(dup, cfg).energy + 1e-12


@given(st.integers(3, 6), st.integers(0, 10_000))
def test_duplicates_get_lower_weight(m, seed):
    # rows 0 and m-1 coincide; the rows in between are orthogonal to everything
    d = m + 1
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    z = np.vstack([q[: m - 1], q[:1]])
    _, w = leverage_weights(gram(z), EnergyConfig(alpha=0.5))
    assert w[0] < w[1] and w[-1] < w[1]


@given(feature_sets)
def test_gradient_step_descends(z):
    cfg = EnergyConfig()
    rep = set_energy(z, cfg)
    g = energy_grad(z, cfg)
    assume(np.linalg.norm(g) > 1e-6)
    after = set_energy(z - 1e-3 * g, cfg, weights=rep.weights, eps_tr=rep.eps_tr).energy
    assert after < rep.energy
