import numpy as np
import pytest
from hypothesis import given, strategies as st

from oscar.endpoint import (
    EncoderSpec,
    encode,
    encode_vjp,
    endpoint_features,
    heun_endpoint,
    heun_endpoint_vjp,
    pullback_control,
)
from oscar.energy import EnergyConfig
from oscar.errors import ConfigError
from oscar.flow import ConstantField, GmmField, LinearField, grid_gmm
from oscar.numerics import finite_diff_grad
from oscar.verify import check_pullback, pullback_sweep

from oracles import rk4

GRID = GmmField(grid_gmm())


def _toy_points(t, n, seed):
    rng = np.random.default_rng(seed)
    return (1 - t) * rng.standard_normal((n, 2)) + t * grid_gmm().sample(n, rng)


def test_constant_field_endpoint_exact():
    a = np.array([0.5, -2.0])
    x = np.array([[1.0, 1.0], [-3.0, 0.25]])
    est = heun_endpoint(ConstantField(a), x, 0.25, 1.0)
    np.testing.assert_array_equal(est.endpoint, x + 0.75 * a)
    np.testing.assert_array_equal(heun_endpoint_vjp(ConstantField(a), x, 0.25, 1.0, x), x)


def test_linear_decay_endpoint_is_half():
    x = np.array([2.0, -4.0])
    end = heun_endpoint(LinearField(-np.eye(2)), x, 0.0, 1.0).endpoint
    np.testing.assert_array_equal(end, x / 2)
    gap = np.abs(end - np.exp(-1.0) * x)
    np.testing.assert_allclose(gap, np.abs(x) * (0.5 - np.exp(-1.0)), rtol=1e-14)


@pytest.mark.parametrize("t,t_end", [(0.0, 1.0), (0.3, 1.0), (0.2, 0.6)])
def test_linear_decay_vjp(t, t_end):
    dt = t_end - t
    cot = np.array([1.5, -0.5])
    got = heun_endpoint_vjp(LinearField(-np.eye(2)), np.ones(2), t, t_end, cot)
    np.testing.assert_allclose(got, (1 - dt + dt * dt / 2) * cot, atol=1e-12)


def test_estimate_recombines():
    x = _toy_points(0.4, 5, 0)
    est = heun_endpoint(GRID, x, 0.4)
    np.testing.assert_array_equal(est.recombine(x), est.endpoint)
    np.testing.assert_array_equal(est.intermediate, x + 0.6 * est.v_start)


def test_bad_times_rejected():
    with pytest.raises(ValueError):
        heun_endpoint(GRID, np.zeros(2), 0.8, 0.5)


def test_gmm_endpoint_close_to_rk4_late():
    for t in (0.5, 0.7, 0.9):
        x = _toy_points(t, 200, 1)
        ref = rk4(GRID.velocity, x, t, 1.0, 1e-3)
        err = np.linalg.norm(heun_endpoint(GRID, x, t).endpoint - ref, axis=1)
        assert err.max() < 0.15, (t, err.max())


def test_gmm_endpoint_close_to_rk4_near_data():
    for t in (0.8, 0.9, 0.95):
        x = _toy_points(t, 1000, 1)
        ref = rk4(GRID.velocity, x, t, 1.0, 1e-3)
        err = np.linalg.norm(heun_endpoint(GRID, x, t).endpoint - ref, axis=1)
        assert err.max() < 0.15, (t, err.max())


def test_heun_second_order_on_gmm():
    t = 0.6
    x = _toy_points(t, 100, 2)
    ref = rk4(GRID.velocity, x, t, 1.0, 1e-3)
    one = heun_endpoint(GRID, x, t).endpoint
    half = heun_endpoint(GRID, heun_endpoint(GRID, x, t, 0.8).endpoint, 0.8, 1.0).endpoint
    e1 = np.sqrt(np.mean(np.sum((one - ref) ** 2, axis=1)))
    e2 = np.sqrt(np.mean(np.sum((half - ref) ** 2, axis=1)))
    assert e1 / e2 >= 3.5, (e1, e2)


def test_gmm_endpoint_vjp_matches_fd():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = rng.uniform(0.05, 0.9)
        x = _toy_points(t, 1, int(rng.integers(1 << 30)))[0]
        cot = rng.standard_normal(2)
        fd = finite_diff_grad(lambda y: float(heun_endpoint(GRID, y, t).endpoint @ cot), x, h=1e-6)
        got = heun_endpoint_vjp(GRID, x, t, 1.0, cot)
        assert np.linalg.norm(got - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)


def test_frozen_predictor_variant_differs():
    x = _toy_points(0.3, 1, 4)[0]
    cot = np.array([1.0, 0.0])
    full = heun_endpoint_vjp(GRID, x, 0.3, 1.0, cot)
    frozen = heun_endpoint_vjp(GRID, x, 0.3, 1.0, cot, through_predictor=False)
    assert not np.allclose(full, frozen)


def test_encoders_trivial_cases():
    u = np.array([1.0, 2.0])
    np.testing.assert_array_equal(encode(EncoderSpec("identity"), u), u)
    lin = EncoderSpec("fixed-linear", weight=np.eye(2))
    np.testing.assert_array_equal(encode(lin, u), u)
    np.testing.assert_array_equal(encode_vjp(lin, u, np.array([3.0, 4.0])), [3.0, 4.0])
    th = EncoderSpec("tanh-lift", 8, seed=2)
    np.testing.assert_array_equal(encode(th, np.zeros(2)), np.tanh(th.bias))
    np.testing.assert_array_equal(encode_vjp(EncoderSpec("identity"), u, u), u)


def test_fixed_linear_rows_unit_norm_and_transpose_vjp():
    enc = EncoderSpec("fixed-linear", 6, seed=1)
    np.testing.assert_allclose(np.linalg.norm(enc.weight, axis=1), 1.0, atol=1e-14)
    c = np.arange(6.0)
    np.testing.assert_array_equal(encode_vjp(enc, np.ones(2), c), c @ enc.weight)
    with pytest.raises(ConfigError):
        EncoderSpec("fixed-linear", weight=2 * np.eye(2))
    with pytest.raises(ConfigError):
        EncoderSpec("clip")


def test_encoder_is_seeded():
    a, b = EncoderSpec("tanh-lift", 16, seed=5), EncoderSpec("tanh-lift", 16, seed=5)
    np.testing.assert_array_equal(a.weight, b.weight)
    np.testing.assert_array_equal(a.bias, b.bias)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 50))
def test_tanh_lift_vjp_matches_fd(a, b, seed):
    enc = EncoderSpec("tanh-lift", 5, seed=seed, scale=0.8)
    u = np.array([a, b])
    cot = np.random.default_rng(seed).standard_normal(5)
    fd = finite_diff_grad(lambda y: float(encode(enc, y) @ cot), u, h=1e-6)
    np.testing.assert_allclose(encode_vjp(enc, u, cot), fd, atol=1e-6)


def test_pullback_trivial_cases():
    x = _toy_points(0.5, 4, 0)
    enc = EncoderSpec("tanh-lift", 8)
    assert np.all(pullback_control(GRID, enc, x, 0.5, 1.0, np.zeros((4, 8))) == 0)
    gz = np.random.default_rng(0).standard_normal((4, 2))
    got = pullback_control(ConstantField([1.0, 0.0]), EncoderSpec("identity"), x, 0.5, 1.0, gz)
    np.testing.assert_array_equal(got, gz)
    with pytest.raises(ValueError):
        pullback_control(GRID, enc, x, 0.5, 1.0, np.zeros((3, 8)))


def test_pullback_rows_independent():
    x = _toy_points(0.4, 5, 1)
    enc = EncoderSpec("tanh-lift", 8, scale=0.5)
    gz = np.random.default_rng(1).standard_normal((5, 8))
    full = pullback_control(GRID, enc, x, 0.4, 1.0, gz)
    for i in range(5):
        np.testing.assert_allclose(full[i], pullback_control(GRID, enc, x[i : i + 1], 0.4, 1.0, gz[i : i + 1])[0])


def test_pullback_matches_fd_of_composed_energy():
    enc = EncoderSpec("tanh-lift", 16, scale=0.5)
    for t in (0.1, 0.5, 0.85):
        err = check_pullback(GRID, enc, _toy_points(t, 4, 7), t, EnergyConfig())
        assert err < 1e-4, (t, err)


def test_pullback_identity_sweep():
    assert pullback_sweep(n_configs=10, seed=3) < 1e-4


def test_endpoint_features_shape():
    z = endpoint_features(GRID, EncoderSpec("tanh-lift", 12), _toy_points(0.2, 6, 0), 0.2)
    assert z.shape == (6, 12) and np.all(np.abs(z) < 1)
