from __future__ import annotations

import json

import numpy as np
import pytest

from cheapstack.errors import AssumptionError, InvalidComplementError, StructuralError
from cheapstack.model import (GameSpec, MatrixFunction, SupplyChainParams, auto_complement, build_reduction,
                              load_game, map_state_back, resolve_game, save_game, supply_chain_game,
                              transform_game, validate_assumptions)
from games import random_game


def test_matrix_function_evaluation_and_derivatives():
    F = MatrixFunction([np.eye(2), 2 * np.ones((2, 2)), [[0, 3], [0, 0]]])
    t = 0.7
    np.testing.assert_allclose(F(t), np.eye(2) + 2 * t * np.ones((2, 2)) + t * t * np.array([[0, 3], [0, 0]]))
    val, d1, d2 = F.jet(t)
    np.testing.assert_allclose(d1, 2 * np.ones((2, 2)) + 2 * t * np.array([[0, 3], [0, 0]]))
    np.testing.assert_allclose(d2, [[0, 6], [0, 0]])
    assert F.derivative(3).is_constant and not np.any(F.derivative(3)(1.0))


def test_matrix_function_trims_zero_powers_and_round_trips():
    F = MatrixFunction([np.ones((1, 2)), np.zeros((1, 2))])
    assert F.is_constant and F.degree == 0
    G = MatrixFunction.from_json(json.loads(json.dumps(F.to_json())))
    np.testing.assert_array_equal(G.coeffs, F.coeffs)


def test_supply_chain_transformed_blocks(sc_tg):
    f = sc_tg.frame(0.0)
    p = SupplyChainParams()
    c1, c2 = p.c1, p.c2
    assert f.A3[0, 0] == pytest.approx(-p.a2 * (c1 ** 2 + c2 ** 2) / c2 ** 2, abs=1e-14)  # -2/9
    assert f.A2[0, 0] == pytest.approx(c1 * (p.a1 * c2 + p.a2 * c1) / (c1 ** 2 + c2 ** 2), abs=1e-14)  # 0.05
    assert f.D_v2[0, 0] == pytest.approx(p.kR * c2 ** 2, abs=1e-14)  # 1.8
    assert f.D_u3[0, 0] == pytest.approx(p.kM * c1 ** 2, abs=1e-14)  # 0.04
    assert abs(f.D_v1[0, 0]) < 1e-14
    np.testing.assert_allclose(sc_tg.B_v, [[0.0], [1.0]])


def test_transformation_makes_follower_input_canonical():
    g = random_game(5, n=4, r=2, s=2, degree=1)
    tg = transform_game(g)
    for t in (0.0, 0.4, g.tf):
        R = tg.reduction.R_jet(t)[0]
        np.testing.assert_allclose(np.linalg.solve(R, g.B_v_cal(t)), tg.B_v, atol=1e-12)
        off = tg.D_v_offdiag(t)
        assert np.max(np.abs(off)) < 1e-12


def test_map_state_back_recovers_initial_state(sc_tg, sc_game):
    Z = map_state_back(sc_tg, [0.0], sc_tg.z0[None])
    np.testing.assert_allclose(Z[0], sc_game.Z0, atol=1e-14)
    with pytest.raises(StructuralError):
        map_state_back(sc_tg, [0.0, 1.0], sc_tg.z0[None])


def test_reduction_derivatives_match_finite_differences():
    g = random_game(7, degree=2)
    red = build_reduction(g)
    t, h = 0.6, 1e-5
    L, dL, ddL = red.L_jet(t)
    np.testing.assert_allclose(dL, (red.L_jet(t + h)[0] - red.L_jet(t - h)[0]) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(ddL, (red.L_jet(t + h)[1] - red.L_jet(t - h)[1]) / (2 * h), atol=1e-7)


def test_validate_assumptions_passes_for_supply_chain(sc_game):
    rep = validate_assumptions(sc_game)
    assert rep.ok
    assert rep["A4"].passed


def test_validate_assumptions_names_failing_check(sc_game):
    bad = GameSpec(**{**sc_game.__dict__, "D_v_cal": MatrixFunction.constant([[0.0, 0.0], [0.0, -1.0]])})
    rep = validate_assumptions(bad)
    assert not rep.ok and not rep["A2"].passed
    with pytest.raises(AssumptionError, match="A2"):
        rep.raise_if_failed()


def test_singular_follower_weight_rejected(sc_game):
    # B_v' D_v B_v = 0 when the follower does not weigh the state it controls
    bad = GameSpec(**{**sc_game.__dict__, "D_v_cal": MatrixFunction.constant(np.zeros((2, 2))),
                      "complement": None})
    assert not validate_assumptions(bad)["A4"].passed


def test_structural_errors():
    g = supply_chain_game()
    with pytest.raises(StructuralError):
        GameSpec(**{**g.__dict__, "Z0": np.zeros(3)})
    with pytest.raises(StructuralError):
        GameSpec(**{**g.__dict__, "s": 2, "B_v_cal": MatrixFunction.constant(np.eye(2))})
    with pytest.raises(StructuralError):
        GameSpec(**{**g.__dict__, "tf": 0.0})


def test_invalid_complement_rejected(sc_game):
    with pytest.raises(InvalidComplementError):
        build_reduction(sc_game, MatrixFunction.constant([[0.2], [-0.6]]))  # parallel to B_v


def test_auto_complement_is_orthonormal_and_valid(sc_game):
    C = auto_complement(sc_game)(0.0)
    np.testing.assert_allclose(C.T @ C, np.eye(1), atol=1e-14)
    assert abs((C.T @ sc_game.B_v_cal(0.0))[0, 0]) < 1e-14


@pytest.mark.parametrize("suffix", [".json", ".yaml"])
def test_game_file_round_trip(tmp_path, suffix):
    g = random_game(3, degree=2)
    path = tmp_path / f"g{suffix}"
    if suffix == ".json":
        save_game(g, path)
    else:
        import yaml

        path.write_text(yaml.safe_dump(g.to_dict()))
    h = load_game(path)
    assert h.to_dict() == g.to_dict()
    assert resolve_game(str(path)).name == g.name


def test_missing_game_file():
    with pytest.raises(OSError):
        resolve_game("/nonexistent/game.json")
