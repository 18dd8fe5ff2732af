from __future__ import annotations

import csv

import numpy as np
import pytest

from cheapstack.cli import main
from cheapstack.model import SupplyChainParams, save_game, supply_chain_game


def _read(path):
    return list(csv.DictReader(open(path)))


def test_solve_writes_outputs(tmp_path, capsys):
    assert main(["solve", "--epsilon", "0.1", "--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"trajectory_eps0p1.csv", "costs_eps0p1.csv",
                                                    "diagnostics_eps0p1.csv"}
    costs = {r["quantity"]: float(r["value"]) for r in _read(tmp_path / "costs_eps0p1.csv")}
    assert costs["J_u"] > 0 and costs["J_v"] > 0
    assert "J_u*=" in capsys.readouterr().out


def test_solve_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--epsilon", "0.2", "--out", str(a), "--format", "text"]) == 0
    assert main(["solve", "--epsilon", "0.2", "--out", str(b), "--format", "text"]) == 0
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()


@pytest.mark.parametrize("argv", [
    ["solve", "--epsilon", "-1"],
    ["solve", "--epsilon", "2"],
    ["solve", "--epsilon", "0.1", "--epsilon", "0.2"],
    ["solve", "--game", "no_such_game.json"],
    ["reproduce", "lotka-volterra"],
    ["solve", "--format", "xml"],
])
def test_bad_input_exits_with_two(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_invalid_game_file_exits_with_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--game", str(bad), "--out", str(tmp_path)]) == 2


def test_asymptotic_order0_has_no_tilde_columns(tmp_path):
    assert main(["asymptotic", "--order", "0", "--epsilon", "0.1", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "controls_eps0p1.csv")
    assert not any(k.startswith(("u_tilde", "v_tilde")) for k in rows[0])
    assert (tmp_path / "expansion.json").exists()


def test_asymptotic_order1_tilde_leader_is_eps_free(tmp_path):
    assert main(["asymptotic", "--epsilon", "0.1", "--epsilon", "0.05", "--out", str(tmp_path)]) == 0
    r = _read(tmp_path / "controls_eps0p1.csv")
    assert "u_tilde_1" in r[0] and "v_tilde_1" in r[0]
    assert (tmp_path / "controls_eps0p05.csv").exists()


def test_zero_initial_state_game_file(tmp_path):
    path = tmp_path / "zero.json"
    save_game(supply_chain_game(SupplyChainParams(Z0=(0.0, 0.0))), path)
    out = tmp_path / "o"
    assert main(["solve", "--game", str(path), "--epsilon", "0.1", "--out", str(out)]) == 0
    costs = {r["quantity"]: float(r["value"]) for r in _read(out / "costs_eps0p1.csv")}
    assert costs["J_u"] == 0.0 and costs["J_v"] == 0.0
    assert main(["asymptotic", "--game", str(path), "--epsilon", "0.1", "--out", str(out)]) == 0
    rows = _read(out / "controls_eps0p1.csv")
    assert all(float(v) == 0.0 for r in rows for k, v in r.items() if k != "t")


def test_compare_and_sweep(tmp_path):
    assert main(["compare", "--epsilon", "0.1", "--out", str(tmp_path)]) == 0
    m = _read(tmp_path / "metrics.csv")
    assert len(m) == 1 and float(m[0]["rel_u_hat_pct"]) > 0
    assert main(["sweep", "--epsilon", "0.2", "--epsilon", "0.1", "--out", str(tmp_path)]) == 0
    s = _read(tmp_path / "sweep.csv")
    c = _read(tmp_path / "comparison.csv")
    assert [float(r["eps"]) for r in s] == [0.2, 0.1]
    assert float(c[1]["improvement_M_pct"]) > float(c[0]["improvement_M_pct"])


@pytest.mark.slow
def test_reproduce_supply_chain(tmp_path, capsys):
    assert main(["reproduce", "supply-chain", "--out", str(tmp_path)]) == 0
    names = {p.stem for p in tmp_path.iterdir()}
    assert {"table1", "metrics", "fig1", "fig2", "fig3", "fig4", "fig5", "fig6"} <= names
    t1 = _read(tmp_path / "table1.csv")
    assert [float(r["eps"]) for r in t1] == [0.2, 0.1, 0.05, 0.01]
    f3 = np.array([[float(v) for v in r.values()] for r in _read(tmp_path / "fig3.csv")])
    assert f3.shape == (401, 4)
    np.testing.assert_allclose(f3[0, 1:], 1.0, atol=1e-10)
    # smaller eps drives the follower's badwill to zero faster
    inner = np.abs(f3[1:-1, 1:])
    assert np.all(inner[:, 0] > inner[:, 1]) and np.all(inner[:, 1] > inner[:, 2])
    f5 = np.array([[float(v) for v in r.values()] for r in _read(tmp_path / "fig5.csv")])
    ratio = f5[:, 1] / f5[:, 2]
    assert np.all((ratio > 0.8) & (ratio < 1.25))
    assert "caveat" in capsys.readouterr().out
