from __future__ import annotations

import dataclasses

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cheapstack.asymptotics import build_expansion, lyapunov_layer_integral, sqrt_spd
from cheapstack.exact_solver import fast_matrix, solve
from cheapstack.model import MatrixFunction, transform_game
from games import random_game

FAST = settings(max_examples=25, deadline=None)
SLOW = settings(max_examples=4, deadline=None, suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(min_value=0, max_value=10_000)
dims = st.integers(min_value=1, max_value=4)


def _spd(seed, n, lo=0.2):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    return M @ M.T + lo * np.eye(n)


@FAST
@given(seeds, dims)
def test_sqrt_spd_squares_back(seed, n):
    M = _spd(seed, n)
    R, Ri = sqrt_spd(M)
    np.testing.assert_allclose(R, R.T, atol=1e-13)
    assert np.min(np.linalg.eigvalsh(R)) > 0
    np.testing.assert_allclose(R @ R, M, rtol=1e-11, atol=1e-11 * np.abs(M).max())
    np.testing.assert_allclose(R @ Ri, np.eye(n), atol=1e-10)


@FAST
@given(seeds, dims)
def test_lyapunov_solution_is_symmetric_and_exact(seed, n):
    S = sqrt_spd(_spd(seed, n))[0]
    rng = np.random.default_rng(seed + 1)
    D = rng.normal(size=(n, n))
    D = D + D.T
    P = lyapunov_layer_integral(S, D)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    np.testing.assert_allclose(S @ P + P @ S, D, atol=1e-10 * max(1.0, np.abs(D).max()))


@FAST
@given(seeds, st.integers(min_value=0, max_value=4), st.floats(min_value=-2.0, max_value=2.0))
def test_polynomial_jet_matches_finite_differences(seed, degree, t):
    rng = np.random.default_rng(seed)
    F = MatrixFunction(rng.normal(size=(degree + 1, 2, 3)))
    v, d1, d2 = F.jet(t, 2)
    h = 1e-4
    np.testing.assert_allclose(v, F(t), atol=1e-12)
    np.testing.assert_allclose(d1, (F(t + h) - F(t - h)) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(d2, (F(t + h) - 2 * F(t) + F(t - h)) / h**2, atol=1e-4)
    np.testing.assert_allclose(d1, F.derivative()(t), atol=1e-12)


@SLOW
@given(seeds)
def test_transformed_weight_rate_matches_finite_differences(seed):
    tg = transform_game(random_game(seed, degree=1))
    h = 1e-5
    for t in (0.2, 0.9):
        fd = (tg.frame(t + h).D_v2 - tg.frame(t - h).D_v2) / (2 * h)
        np.testing.assert_allclose(tg.frame(t).dD_v2, fd, atol=1e-6)


@SLOW
@given(seeds, st.floats(min_value=0.1, max_value=3.0))
def test_costs_scale_quadratically_with_initial_state(seed, c):
    g = random_game(seed, degree=0)
    tg = transform_game(g)
    tg2 = transform_game(dataclasses.replace(g, Z0=c * g.Z0))
    a = np.array(solve(tg, 0.2).costs)
    b = np.array(solve(tg2, 0.2).costs)
    assert np.all(a >= 0)
    np.testing.assert_allclose(b, c * c * a, rtol=1e-8, atol=1e-12)


@SLOW
@given(seeds, st.integers(min_value=0, max_value=1))
def test_random_game_layers_and_outer_terms(seed, degree):
    tg = transform_game(random_game(seed, degree=degree))
    ex = build_expansion(tg)
    assert ex.outer.dae_residual(np.linspace(0.0, tg.tf, 11)) <= 1e-10
    xi = np.linspace(0.0, 10.0, 25)
    keys = [f"{k}_0" for k in ("z2", "lam_u2", "lam_v2", "mu2")]
    w = np.hstack([ex.left(k, xi) for k in keys])
    dw = np.hstack([ex.left.derivative(k, xi) for k in keys])
    scale = max(1.0, np.abs(w).max())
    assert np.max(np.abs(dw - w @ fast_matrix(tg, 0.0, 0.0).T)) <= 1e-9 * scale
    # every layer term decays
    for name in ex.left.outputs:
        assert np.max(np.abs(ex.left(name, [60.0 / ex.beta0]))) <= 1e-12 * scale
