"""Command-line front end.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .asymptotics import build_expansion, eps_free_costs, hat_controls, tilde_controls
from .errors import (AssumptionError, CheapStackError, ConvergenceError, InvalidComplementError,
                     StructuralError, UnsolvableProblemError, UnsupportedConfigurationError)
from .evaluate import (cheap_control_comparison, eps_metrics, evaluation_mesh)
from .exact_solver import EPS_MIN, ODE_TOL, solve
from .model import (BUILTIN_GAMES, SupplyChainParams, map_state_back, resolve_game, supply_chain_game,
                    transform_game, validate_assumptions)

log = logging.getLogger("cheapstack")

TABLE_EPS = (0.2, 0.1, 0.05, 0.01)
FIGURE_EPS = (0.2, 0.15, 0.1, 0.075, 0.05, 0.03, 0.02, 0.01)
BADWILL_EPS = (0.2, 0.1, 0.05)
COMPARISON_EPS = (0.2, 0.15, 0.1, 0.075, 0.05, 0.03, 0.02, 0.01)
REFERENCE_TABLE = {
    0.2: (1.4368, 0.4867, 2.1032, 1.2561),
    0.1: (0.7868, 0.2630, 1.1215, 0.6390),
    0.05: (0.4114, 0.0040, 0.5791, 0.1245),
    0.01: (0.0857, 1.038, 0.1195, 1.4233),
}

INPUT_ERRORS = (StructuralError, AssumptionError, InvalidComplementError, UnsupportedConfigurationError,
                OSError, json.JSONDecodeError)
NUMERICAL_ERRORS = (ConvergenceError, UnsolvableProblemError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def _num(x) -> str:
    return repr(float(x))


def write_table(path: Path, header: list[str], rows, fmt: str) -> Path:
    """CSV (full precision) or aligned plain text; deterministic byte output."""
    rows = [[c if isinstance(c, str) else _num(c) for c in r] for r in rows]
    if fmt == "csv":
        path = path.with_suffix(".csv")
        lines = [",".join(header)] + [",".join(r) for r in rows]
    else:
        path = path.with_suffix(".txt")
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_summary(path: Path, items: dict, fmt: str) -> Path:
    if fmt == "csv":
        return write_table(path, ["quantity", "value"], [[k, v if isinstance(v, str) else _num(v)]
                                                        for k, v in items.items()], "csv")
    path = path.with_suffix(".txt")
    width = max(len(k) for k in items)
    path.write_text("".join(f"{k.ljust(width)}  {v if isinstance(v, str) else _num(v)}\n"
                            for k, v in items.items()))
    return path


def _eps_tag(e: float) -> str:
    return f"{e:g}".replace(".", "p")


def _check_eps(values: list[float]) -> list[float]:
    for e in values:
        if not (EPS_MIN <= e <= 1.0):
            raise UsageError(f"epsilon must lie in [{EPS_MIN:g}, 1], got {e:g}")
    return values


def _load(args):
    g = resolve_game(args.game)
    validate_assumptions(g).raise_if_failed()
    return g


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve_kw(args) -> dict:
    kw = {"tol": args.tol}
    if args.mesh:
        kw["mesh"] = np.linspace(0.0, 1.0, args.mesh + 1)
    return kw


def _solve(tg, eps, args):
    kw = _solve_kw(args)
    if "mesh" in kw:
        kw["mesh"] = kw["mesh"] * tg.tf
    return solve(tg, eps, **kw)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    eps_list = _check_eps(args.epsilon or [0.1])
    if len(eps_list) != 1:
        raise UsageError("solve takes exactly one --epsilon")
    eps = eps_list[0]
    g = _load(args)
    tg = transform_game(g)
    sol = _solve(tg, eps, args)
    out = _outdir(args)
    tag = _eps_tag(eps)
    t = sol.mesh
    table = sol.trajectory_table(t)
    Z = map_state_back(tg, t, table[:, 1: 1 + tg.n])
    header = sol.trajectory_header() + [f"Z_{i + 1}" for i in range(tg.n)]
    write_table(out / f"trajectory_eps{tag}", header, np.column_stack([table, Z]), args.format)
    Ju, Jv = sol.costs
    d = sol.diagnostics
    write_summary(out / f"costs_eps{tag}", {"eps": eps, "J_u": Ju, "J_v": Jv}, args.format)
    write_summary(out / f"diagnostics_eps{tag}", {
        "ode_residual": d.ode_residual, "boundary_residual": d.boundary_residual,
        "stationarity_residual": d.stationarity_residual, "mesh_size": str(d.mesh_size),
        "refinements": str(d.refinements)}, args.format)
    print(f"eps={eps:g}  J_u*={Ju:.10g}  J_v*={Jv:.10g}  ode_residual={d.ode_residual:.2e}  "
          f"mesh={d.mesh_size}")
    return 0


def cmd_asymptotic(args) -> int:
    eps_list = _check_eps(args.epsilon or [0.1])
    g = _load(args)
    tg = transform_game(g)
    ex = build_expansion(tg, order=args.order)
    out = _outdir(args)
    ex.dump(out / "expansion.json")
    J0u, J0v = eps_free_costs(ex)
    write_summary(out / "eps_free_costs", {"J_u_bar0": J0u, "J_v_bar0": J0v}, args.format)
    r, s = tg.r, tg.s
    for eps in eps_list:
        t = evaluation_mesh(tg, eps)
        uh, vh = hat_controls(ex, t, eps)
        header = ["t"] + [f"u_hat_{i + 1}" for i in range(r)] + [f"v_hat_{i + 1}" for i in range(s)]
        cols = [t[:, None], uh, vh]
        if args.order >= 1:
            ut, vt = tilde_controls(ex, t, eps)
            header += [f"u_tilde_{i + 1}" for i in range(r)] + [f"v_tilde_{i + 1}" for i in range(s)]
            cols += [ut, vt]
        write_table(out / f"controls_eps{_eps_tag(eps)}", header, np.hstack(cols), args.format)
    print(f"order={args.order}  J_u_bar0={J0u:.10g}  J_v_bar0={J0v:.10g}  files for {len(eps_list)} eps values")
    return 0


METRIC_COLUMNS = ["eps", "du_hat", "dv_hat", "J_u_star", "J_v_star", "J_u_hat", "J_v_hat", "J_u_tilde",
                  "J_v_tilde", "J_u_bar0", "J_v_bar0", "dJ_u_hat", "dJ_v_hat", "dJ_u_tilde", "dJ_v_tilde",
                  "dJ_u_bar0", "dJ_v_bar0", "rel_u_hat_pct", "rel_v_hat_pct", "rel_u_tilde_pct",
                  "rel_v_tilde_pct"]
COMPARISON_COLUMNS = ["eps", "J_M_11", "J_R_11", "J_M_e1", "J_R_e1", "J_M_1e", "J_R_1e", "improvement_M_pct",
                      "improvement_R_pct", "deterioration_M_pct", "deterioration_R_pct"]


def _metric_rows(tg, eps_list):
    ex = build_expansion(tg)
    return [eps_metrics(tg, e, ex) for e in eps_list]


def cmd_compare(args) -> int:
    eps_list = _check_eps(args.epsilon or list(TABLE_EPS))
    g = _load(args)
    tg = transform_game(g)
    rows = _metric_rows(tg, eps_list)
    out = _outdir(args)
    write_table(out / "metrics", METRIC_COLUMNS, [[r.row()[c] for c in METRIC_COLUMNS] for r in rows], args.format)
    for r in rows:
        print(f"eps={r.eps:g}  du_hat={r.du_hat:.3e}  dv_hat={r.dv_hat:.3e}  "
              f"rel_hat=({r.rel_hat[0]:.4f}%, {r.rel_hat[1]:.4f}%)  "
              f"rel_tilde=({r.rel_tilde[0]:.4f}%, {r.rel_tilde[1]:.4f}%)")
    return 0


def cmd_sweep(args) -> int:
    eps_list = _check_eps(args.epsilon or list(COMPARISON_EPS))
    g = _load(args)
    tg = transform_game(g)
    rows = []
    for e in eps_list:
        sol = _solve(tg, e, args)
        d = sol.diagnostics
        rows.append([e, *sol.costs, d.ode_residual, d.boundary_residual, d.stationarity_residual,
                     str(d.mesh_size)])
    out = _outdir(args)
    write_table(out / "sweep", ["eps", "J_u", "J_v", "ode_residual", "boundary_residual",
                                "stationarity_residual", "mesh_size"], rows, args.format)
    comp_path = None
    try:
        comp = cheap_control_comparison(g, eps_list)
    except UnsupportedConfigurationError as exc:
        log.warning("weight comparison skipped: %s", exc)
    else:
        comp_path = write_table(out / "comparison", COMPARISON_COLUMNS,
                                [[c.row()[k] for k in COMPARISON_COLUMNS] for c in comp], args.format)
    for r in rows:
        print(f"eps={r[0]:g}  J_u*={r[1]:.10g}  J_v*={r[2]:.10g}")
    if comp_path is not None:
        print(f"weight comparison written to {comp_path.name}")
    return 0


def cmd_reproduce(args) -> int:
    if args.model != "supply-chain":
        raise UsageError(f"unknown model {args.model!r}; available: supply-chain")
    z0 = tuple(args.z0) if args.z0 else SupplyChainParams().Z0
    g = supply_chain_game(SupplyChainParams(Z0=z0))
    tg = transform_game(g)
    out = _outdir(args)
    fmt = args.format
    print(f"supply-chain game, Z0 = ({z0[0]:g}, {z0[1]:g})")
    print("caveat: the reference relative cost errors come without a stated initial state; "
          "they depend on its direction, so the comparison below is approximate")

    eps_all = sorted(set(TABLE_EPS) | set(FIGURE_EPS), reverse=True)
    ex = build_expansion(tg)
    metrics = {e: eps_metrics(tg, e, ex) for e in eps_all}

    rows = [[e, *metrics[e].rel_hat, *metrics[e].rel_tilde] for e in TABLE_EPS]
    write_table(out / "table1", ["eps", "rel_hat_M_pct", "rel_hat_R_pct", "rel_tilde_M_pct", "rel_tilde_R_pct"],
                rows, fmt)
    write_table(out / "metrics", METRIC_COLUMNS,
                [[metrics[e].row()[c] for c in METRIC_COLUMNS] for e in eps_all], fmt)
    write_table(out / "fig1", ["eps", "du_hat", "dv_hat"],
                [[e, metrics[e].du_hat, metrics[e].dv_hat] for e in FIGURE_EPS], fmt)
    write_table(out / "fig2", ["eps", "dJ_hat_M", "dJ_hat_R", "dJ_tilde_M", "dJ_tilde_R"],
                [[e, *metrics[e].dJ_hat, *metrics[e].dJ_tilde] for e in FIGURE_EPS], fmt)

    t = np.linspace(0.0, tg.tf, 401)
    cols = [t]
    for e in BADWILL_EPS:
        sol = solve(tg, e)
        cols.append(map_state_back(tg, t, sol.state(t))[:, 1])
    write_table(out / "fig3", ["t"] + [f"B_SB_eps{_eps_tag(e)}" for e in BADWILL_EPS], np.column_stack(cols), fmt)

    comp = cheap_control_comparison(g, COMPARISON_EPS)
    write_table(out / "fig4", ["eps", "J_M_11", "J_M_cheap_leader", "J_M_cheap_follower", "J_R_11",
                               "J_R_cheap_leader", "J_R_cheap_follower"],
                [[c.eps, c.J_M_11, c.J_M_e1, c.J_M_1e, c.J_R_11, c.J_R_e1, c.J_R_1e] for c in comp], fmt)
    write_table(out / "fig5", ["eps", "improvement_M_pct", "improvement_R_pct"],
                [[c.eps, c.improvement_M, c.improvement_R] for c in comp], fmt)
    write_table(out / "fig6", ["eps", "deterioration_M_pct", "deterioration_R_pct"],
                [[c.eps, c.deterioration_M, c.deterioration_R] for c in comp], fmt)

    print(f"{'eps':>6} {'hat_M':>9} {'hat_R':>9} {'tilde_M':>9} {'tilde_R':>9}   reference")
    for e in TABLE_EPS:
        vals = (*metrics[e].rel_hat, *metrics[e].rel_tilde)
        ref = REFERENCE_TABLE[e]
        print(f"{e:6g} " + " ".join(f"{v:9.4f}" for v in vals) + "   " + " ".join(f"{v:.4f}" for v in ref))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cheapstack",
                                description="Cheap-follower open-loop Stackelberg games: exact and asymptotic solutions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, game=True):
        if game:
            sp.add_argument("--game", default="supply_chain",
                            help=f"built-in game ({', '.join(BUILTIN_GAMES)}) or a JSON/YAML spec path")
        sp.add_argument("--epsilon", type=float, action="append", help="follower weight parameter (repeatable)")
        sp.add_argument("--tol", type=float, default=ODE_TOL, help="exact-solver residual tolerance")
        sp.add_argument("--mesh", type=int, default=0, help="uniform exact-solver mesh intervals (0 = automatic)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--format", choices=("csv", "text"), default="csv")

    sp = sub.add_parser("solve", help="exact solution for one epsilon")
    common(sp)
    sp.set_defaults(func=cmd_solve)
    sp = sub.add_parser("asymptotic", help="first-order expansion and suboptimal controls")
    common(sp)
    sp.add_argument("--order", type=int, choices=(0, 1), default=1)
    sp.set_defaults(func=cmd_asymptotic)
    sp = sub.add_parser("compare", help="control and cost errors of the suboptimal pairs")
    common(sp)
    sp.set_defaults(func=cmd_compare)
    sp = sub.add_parser("sweep", help="exact costs over an epsilon grid, plus the weight comparison")
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("reproduce", help="regenerate the supply-chain tables and figure data")
    sp.add_argument("model", help="supply-chain")
    sp.add_argument("--z0", type=float, nargs=2, metavar=("B_NB", "B_SB"), help="initial badwill (default 1 1)")
    sp.add_argument("--out", default="out")
    sp.add_argument("--format", choices=("csv", "text"), default="csv")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except CheapStackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
