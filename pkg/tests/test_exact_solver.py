from __future__ import annotations

import numpy as np
import pytest

from cheapstack.errors import UnsupportedConfigurationError
from cheapstack.exact_solver import (assemble_bvp, extract_optimal_controls, fast_spectrum,
                                     general_weight_solve, leader_cost_costate_form, solve,
                                     spectral_rates, stationarity_residual)
from cheapstack.model import MatrixFunction, SupplyChainParams, supply_chain_game, transform_game
from games import random_game


def test_assemble_rejects_nonpositive_eps(sc_tg):
    with pytest.raises(ValueError):
        assemble_bvp(sc_tg, 0.0)
    with pytest.raises(ValueError):
        solve(sc_tg, -0.1)


def test_follower_block_scales_like_inverse_eps_squared(sc_tg):
    # unscaled coupling of lam_v2 into z2 is S_v = I / eps^2; in scaled rows it is -1 / eps
    bvp = assemble_bvp(sc_tg, 0.1)
    M = bvp.matrix(0.0)
    sl = bvp.slices
    assert M[sl["z2"], sl["lam_v2"]][0, 0] == pytest.approx(-10.0)


def test_mu2_row_of_supply_chain(sc_tg):
    eps = 0.1
    bvp = assemble_bvp(sc_tg, eps)
    F = bvp.scaled_rhs_matrix(0.0)
    sl = bvp.slices
    row = F[sl["mu2"]]
    assert row[0, sl["lam_u2"]][0] == 1.0
    assert row[0, sl["mu1"]][0] == pytest.approx(eps * -2.0 / 9.0)
    assert row[0, sl["lam_v2"]][0] == 0.0  # G_uv = 0


@pytest.mark.parametrize("eps", [0.2, 0.1, 0.05, 0.01])
def test_residuals_on_supply_chain(sc_solutions, eps):
    sol = sc_solutions(eps)
    d = sol.diagnostics
    assert d.ode_residual <= 1e-8
    assert d.boundary_residual <= 1e-10
    assert d.stationarity_residual <= 1e-10
    rate, _ = spectral_rates(sol.bvp.matrix, sol.tg.tf)
    assert sol.sol.ode_residual(sol.bvp.row_scale, rate, points="gauss") <= 1e-8


def test_imposed_boundary_values(sc_solutions):
    sol = sc_solutions(0.1)
    c = sol.components()
    for k in ("lam_u1", "lam_u2", "lam_v1", "lam_v2"):
        assert np.all(c[k][-1] == 0.0) or np.max(np.abs(c[k][-1])) < 1e-14
    assert np.max(np.abs(np.r_[c["mu1"][0], c["mu2"][0]])) < 1e-14
    u, v = extract_optimal_controls(sol)
    assert np.max(np.abs(u[-1])) < 1e-13 and np.max(np.abs(v[-1])) < 1e-12


def test_leader_control_matches_scalar_closed_form(sc_solutions):
    p = SupplyChainParams()
    eps = 0.1
    sol = sc_solutions(eps)
    c = sol.components()
    printed = ((p.b1 * p.c2 - p.b2 * p.c1) / (p.c1 ** 2 + p.c2 ** 2) * c["lam_u1"]
               + eps * (p.b2 / p.c2) * c["lam_u2"])
    u, _ = extract_optimal_controls(sol)
    np.testing.assert_allclose(u, printed, atol=1e-12)


def test_costs_positive_and_costate_form_agrees(sc_solutions):
    sol = sc_solutions(0.1)
    Ju, Jv = sol.costs
    assert Ju > 0 and Jv > 0
    assert leader_cost_costate_form(sol) == pytest.approx(Ju, rel=1e-8)


def test_quadrature_order_doubling(sc_solutions):
    sol = sc_solutions(0.05)
    a, b = sol.cost_at_order(8), sol.cost_at_order(16)
    assert abs(a[0] - b[0]) <= 1e-9 * abs(b[0])
    assert abs(a[1] - b[1]) <= 1e-9 * abs(b[1])


def test_zero_initial_state_gives_zero_solution():
    g = supply_chain_game(SupplyChainParams(Z0=(0.0, 0.0)))
    sol = solve(g, 0.1)
    assert np.max(np.abs(sol.sol.values)) == 0.0
    assert sol.costs == (0.0, 0.0)


def test_tiny_horizon():
    g = supply_chain_game(SupplyChainParams(tf=1e-9))
    sol = solve(g, 0.1)
    tg = sol.tg
    np.testing.assert_allclose(sol.state(tg.tf)[0], tg.z0, atol=1e-7)
    assert max(sol.costs) < 1e-7


def test_time_varying_game_residuals(tv_tg):
    sol = solve(tv_tg, 0.05)
    assert sol.diagnostics.ode_residual <= 1e-8
    assert sol.diagnostics.boundary_residual <= 1e-10
    assert stationarity_residual(sol) <= 1e-10


def test_deterministic(sc_tg):
    a, b = solve(sc_tg, 0.07), solve(sc_tg, 0.07)
    assert np.array_equal(a.sol.values, b.sol.values)
    assert a.costs == b.costs


def test_general_weight_solve_matches_dedicated_path(sc_game, sc_solutions):
    for eps in (0.2, 0.05):
        gs = general_weight_solve(sc_game.with_weights(1.0, eps * eps))
        Ju, Jv = sc_solutions(eps).costs
        assert gs.costs[0] == pytest.approx(Ju, rel=1e-12, abs=1e-12)
        assert gs.costs[1] == pytest.approx(Jv, rel=1e-12, abs=1e-12)


def test_general_weight_solve_requires_zero_cross_weight():
    g = random_game(2, G_uv=True)
    with pytest.raises(UnsupportedConfigurationError):
        general_weight_solve(g)


def test_costs_invariant_to_complement(sc_game, sc_solutions):
    other = sc_game.with_complement(None)  # automatic orthonormal complement
    alt = sc_game.with_complement(MatrixFunction.constant([[1.0], [0.0]]))
    J = sc_solutions(0.1).costs
    for g in (other, alt):
        Jg = solve(g, 0.1).costs
        assert Jg[0] == pytest.approx(J[0], rel=1e-8)
        assert Jg[1] == pytest.approx(J[1], rel=1e-8)


def test_fast_spectrum_split(sc_tg):
    beta = np.sqrt(1.8)
    rep = fast_spectrum(sc_tg, 0.05, 11)
    assert rep.split_holds(0.9 * beta)
    assert all(c == (2, 2) for c in rep.counts(0.9 * beta))
    rep0 = fast_spectrum(sc_tg, 0.0, 11)
    for ev in rep0.eigenvalues:
        np.testing.assert_allclose(np.sort(ev.real), [-beta, -beta, beta, beta], rtol=0, atol=1e-10)
        assert np.max(np.abs(ev.imag)) < 1e-10
