import json
from dataclasses import replace

import numpy as np
import pytest

from oscar.endpoint import EncoderSpec
from oscar.endpoint import heun_endpoint, pullback_control
from oscar.energy import EnergyConfig, energy_grad, set_energy
from oscar.flow import ConstantField, GmmField, grid_gmm
from oscar.sampler import SamplerConfig
from oscar.schedules import zero_beta
from oscar.verify import (
    VerifySettings,
    check_descent,
    composed_energy,
    check_deviation_scaling,
    check_orthogonality,
    check_pullback,
    check_reduction,
    check_volume_identity,
    format_report,
    parallel_fault,
    random_feature_sets,
    run_suite,
)

from oracles import fd5_grad

GRID = GmmField(grid_gmm())
SMALL = SamplerConfig(particles=16, steps=40)


def test_pullback_identity_trivial_chain():
    # both Jacobians are the identity; a fourth-order stencil resolves the
    # comparison well below the second-order differences used by the check
    field, enc, cfg = ConstantField([0.3, -0.2]), EncoderSpec("identity"), EnergyConfig()
    x = np.random.default_rng(0).standard_normal((5, 2))
    z = heun_endpoint(field, x, 0.2).endpoint
    rep = set_energy(z, cfg)
    g = pullback_control(field, enc, x, 0.2, 1.0, energy_grad(z, cfg, rep.weights, rep.eps_tr))
    fd = fd5_grad(lambda y: composed_energy(field, enc, y, 0.2, cfg, 1.0, rep.weights, rep.eps_tr), x)
    assert np.max(np.linalg.norm(g - fd, axis=1)) <= 1e-10 * np.max(np.linalg.norm(fd, axis=1))
    assert check_pullback(field, enc, x, 0.2, cfg) <= 1e-8


def test_pullback_zero_gradient_both_sides_zero():
    x = np.zeros((3, 2))
    assert check_pullback(ConstantField([0.0, 0.0]), EncoderSpec("identity"), x, 0.5, EnergyConfig()) == 0.0


def test_pullback_tanh_gmm():
    x = 1.5 * np.random.default_rng(1).standard_normal((4, 2))
    assert check_pullback(GRID, EncoderSpec("tanh-lift", 12, 3, 0.5), x, 0.3, EnergyConfig()) <= 1e-4


def test_pullback_needs_two_particles():
    with pytest.raises(ValueError):
        check_pullback(GRID, EncoderSpec("identity"), np.zeros((1, 2)), 0.3, EnergyConfig())


def test_volume_identity_single_row_closed_form():
    z = np.array([[0.6, -1.2, 0.4]])
    cfg = EnergyConfig(tau=0.8)
    eps_tr = cfg.eps * z[0] @ z[0]
    closed = 0.5 * np.log(1 + cfg.tau * z[0] @ z[0] + eps_tr)
    rep = set_energy(z, cfg)
    assert rep.volume_log == pytest.approx(closed, abs=1e-14)
    assert rep.energy == pytest.approx(-closed, abs=1e-14)
    assert check_volume_identity([z], cfg) <= 1e-12


def test_volume_identity_sweep():
    assert check_volume_identity(random_feature_sets(50)) <= 1e-12


def test_orthogonality_and_fault():
    g, n = check_orthogonality(SMALL, GRID)
    assert g <= 1e-6 and n <= 1e-6
    g_bad, _ = check_orthogonality(SMALL, GRID, control_hook=parallel_fault)
    assert g_bad > 1e-2


def test_reduction():
    assert check_reduction(SMALL, GRID, range(3))


def test_descent_not_applicable_without_control():
    cfg = replace(SMALL, gamma=replace(SMALL.gamma, gamma0=0.0), beta=zero_beta())
    assert check_descent(cfg, GRID).mode == "not-applicable"


def test_pure_descent_small_steps():
    cfg = SamplerConfig(beta=zero_beta())
    verdict = check_descent(cfg, GRID)
    assert verdict.mode == "pure" and verdict.passed, verdict.violating_steps
    assert verdict.steps_checked == 30


def test_zero_budget_gives_zero_deviation():
    fit = check_deviation_scaling(SMALL, GRID, budgets=(0.0, 0.05, 0.1), steps_list=(20, 40), n_seeds=4, n_boot=20)
    zero_cells = [c for c in fit.cells if c["budget"] == 0.0]
    assert zero_cells and all(c["mean"] == 0.0 for c in zero_cells)
    assert all(c["mean"] > 0 for c in fit.cells if c["budget"] > 0)


def test_suite_deterministic_and_serialisable():
    settings = VerifySettings(pullback_configs=3, volume_sets=10, reduction_seeds=2)
    only = ("pullback", "volume", "orthogonality", "reduction")
    a = run_suite(SMALL, settings=settings, only=only).to_dict()
    b = run_suite(SMALL, settings=settings, only=only).to_dict()
    a.pop("timings"), b.pop("timings")
    assert a == b and a["passed"]
    json.loads(json.dumps(a))


def test_suite_fault_injection_fails_orthogonality():
    rep = run_suite(SMALL, settings=VerifySettings(inject_parallel_fault=True), only=("orthogonality",))
    assert rep.hard_failures() == ["orthogonality"]
    assert "FAIL" in format_report(rep)


def test_suite_rejects_unknown_check():
    with pytest.raises(ValueError):
        run_suite(SMALL, only=("bogus",))
