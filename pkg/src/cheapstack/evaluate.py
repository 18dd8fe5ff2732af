"""Open-loop simulation, cost evaluation and the error / comparison metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .asymptotics import Expansion1, build_expansion, eps_free_costs, hat_controls, tilde_controls
from .errors import ConvergenceError, UnsupportedConfigurationError
from .exact_solver import QUAD_ORDER, BvpSolution, _integrands, general_weight_solve, solve
from .model import GameSpec, TransformedGame, transform_game
from .shooting import gauss_legendre, three_zone_mesh

SIM_RTOL = 1e-12
SIM_ATOL = 1e-13
LAYER_WIDTHS = 40.0  # layer zone, in units of eps / (slowest layer rate)


@dataclass
class ControlPair:
    """Open-loop controls as vectorized evaluators t -> (N, r) and t -> (N, s)."""

    u: Callable[[np.ndarray], np.ndarray]
    v: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"
    eps_scale: float | None = None  # time scale of fast features, if any
    joint: Callable[[np.ndarray], tuple] | None = None  # optional t -> (u, v) in one pass

    def __call__(self, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u, v = self.joint(t) if self.joint is not None else (self.u(t), self.v(t))
        return np.asarray(u).reshape(t.size, -1), np.asarray(v).reshape(t.size, -1)


def zero_pair(tg: TransformedGame) -> ControlPair:
    return ControlPair(lambda t: np.zeros((np.size(t), tg.r)), lambda t: np.zeros((np.size(t), tg.s)), "zero")


def exact_pair(sol: BvpSolution) -> ControlPair:
    def joint(t):
        return sol.controls_from_values(t, sol.sol(t))

    return ControlPair(sol.u_star, sol.v_star, "exact", sol.eps, joint)


def _pair_from(fn, label: str, eps: float) -> ControlPair:
    return ControlPair(lambda t: fn(t)[0], lambda t: fn(t)[1], label, eps, fn)


def hat_pair(expansion: Expansion1, eps: float) -> ControlPair:
    return _pair_from(lambda t: hat_controls(expansion, t, eps), "hat", eps)


def tilde_pair(expansion: Expansion1, eps: float) -> ControlPair:
    return _pair_from(lambda t: tilde_controls(expansion, t, eps), "tilde", eps)


def evaluation_mesh(tg: TransformedGame, eps: float | None, interior: int = 100) -> np.ndarray:
    """Quadrature / comparison mesh, refined near both ends on the eps scale."""
    tf = tg.tf
    if not eps:
        return np.linspace(0.0, tf, interior + 1)
    beta = min(float(np.min(np.linalg.eigvalsh(tg.frame(t).D_v2))) for t in (0.0, tf)) ** 0.5
    width = LAYER_WIDTHS * eps / beta
    return three_zone_mesh(tf, eps / (4.0 * beta), tf / interior, width)


@dataclass
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    dense: Callable | None = None

    def __call__(self, t) -> np.ndarray:
        return self.dense(np.atleast_1d(t)).T


def simulate_openloop(tg: TransformedGame, pair: ControlPair, t_eval=None, z0=None,
                      rtol: float = SIM_RTOL, atol: float = SIM_ATOL) -> Trajectory:
    """Integrate z' = A z + B_u u + B_v v from z0 (default: the game's) over [0, tf]."""
    z0 = tg.z0 if z0 is None else np.asarray(z0, dtype=float)
    Bv = tg.B_v
    const = tg.frame(0.0) if tg.is_constant else None

    def rhs(t, z):
        f = const or tg.frame(t)
        u, v = pair(t)
        return f.A @ z + f.B_u @ u[0] + Bv @ v[0]

    first = None if pair.eps_scale is None else 0.05 * pair.eps_scale
    res = solve_ivp(rhs, (0.0, tg.tf), z0, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=True, first_step=first)
    if not res.success:
        raise ConvergenceError(f"open-loop integration failed: {res.message}", achieved=np.nan)
    t = res.t if t_eval is None else np.atleast_1d(np.asarray(t_eval, dtype=float))
    z = res.y.T if t_eval is None else res.sol(t).T
    return Trajectory(t, z, res.sol)


def cost_of_pair(tg: TransformedGame, eps: float, pair: ControlPair, trajectory: Trajectory | None = None,
                 mesh: np.ndarray | None = None, quad_order: int = QUAD_ORDER) -> tuple[float, float]:
    """(J_u, J_v) of a pair for follower weight eps**2, by composite Gauss-Legendre quadrature."""
    if trajectory is None:
        trajectory = simulate_openloop(tg, pair)
    mesh = evaluation_mesh(tg, pair.eps_scale or eps) if mesh is None else mesh
    c, w = gauss_legendre(quad_order)
    h = np.diff(mesh)
    t = (mesh[:-1, None] + h[:, None] * c[None, :]).ravel()
    wt = (h[:, None] * w[None, :]).ravel()
    z = trajectory(t)
    u, v = pair(t)
    ju, jv = _integrands(tg, eps, t, z, u, v)
    return 0.5 * float(wt @ ju), 0.5 * float(wt @ jv)


def control_errors(exact: ControlPair, approx: ControlPair, tg: TransformedGame,
                   mesh: np.ndarray | None = None, refine: int = 4) -> tuple[float, float]:
    """Max-norm control differences on a mesh refined ``refine`` times."""
    if refine < 1:
        raise ValueError("refine must be >= 1")
    if mesh is None:
        mesh = evaluation_mesh(tg, exact.eps_scale or approx.eps_scale)
    h = np.diff(mesh)
    frac = np.arange(refine) / refine
    t = np.append((mesh[:-1, None] + h[:, None] * frac[None, :]).ravel(), mesh[-1])
    ue, ve = exact(t)
    ua, va = approx(t)
    return float(np.max(np.abs(ue - ua))), float(np.max(np.abs(ve - va)))


# ---------------------------------------------------------------------------
# optimality checks


def bump(j: int, tf: float) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth deterministic deviation vanishing at both ends."""
    return lambda t: np.sin(j * np.pi * np.asarray(t) / tf) * (1.0 + 0.5 * np.cos(np.pi * np.asarray(t) / tf))


def follower_response(tg: TransformedGame, eps: float, u: Callable, rtol: float = 1e-11,
                      atol: float = 1e-12) -> ControlPair:
    """Follower's optimal open-loop reply to a fixed leader control, by a Riccati sweep.

    P' = -A'P - PA + P S_v P - D_v,  g' = -(A - S_v P)'g - P B_u u,  P(tf) = g(tf) = 0,
    with S_v = B_v B_v' / eps**2; then z' = (A - S_v P) z - S_v g + B_u u and
    v = -B_v'(P z + g) / eps**2.
    """
    n = tg.n
    Bv = tg.B_v
    Sv = Bv @ Bv.T / eps ** 2

    def back(t, y):
        f = tg.frame(t)
        P = y[: n * n].reshape(n, n)
        g = y[n * n:]
        uu = np.atleast_2d(u(np.array([t])))[0]
        dP = -f.A.T @ P - P @ f.A + P @ Sv @ P - f.D_v
        dg = -(f.A - Sv @ P).T @ g - P @ f.B_u @ uu
        return np.r_[dP.ravel(), dg]

    rb = solve_ivp(back, (tg.tf, 0.0), np.zeros(n * n + n), method="DOP853", rtol=rtol, atol=atol,
                   dense_output=True, first_step=0.05 * eps)
    if not rb.success:
        raise ConvergenceError(f"Riccati sweep failed: {rb.message}", achieved=np.nan)

    def fwd(t, z):
        f = tg.frame(t)
        y = rb.sol(t)
        P = y[: n * n].reshape(n, n)
        uu = np.atleast_2d(u(np.array([t])))[0]
        return (f.A - Sv @ P) @ z - Sv @ y[n * n:] + f.B_u @ uu

    rf = solve_ivp(fwd, (0.0, tg.tf), tg.z0, method="DOP853", rtol=rtol, atol=atol, dense_output=True,
                   first_step=0.05 * eps)
    if not rf.success:
        raise ConvergenceError(f"follower response integration failed: {rf.message}", achieved=np.nan)

    def v(t):
        t = np.atleast_1d(t)
        Y = rb.sol(t)
        Z = rf.sol(t)
        out = np.empty((t.size, tg.s))
        for i in range(t.size):
            P = Y[: n * n, i].reshape(n, n)
            out[i] = -Bv.T @ (P @ Z[:, i] + Y[n * n:, i]) / eps ** 2
        return out

    return ControlPair(lambda t: np.atleast_2d(u(np.atleast_1d(t))).reshape(np.size(t), -1), v,
                       "follower-response", eps)


@dataclass
class OptimalityCheck:
    eps: float
    J_u_star: float
    J_v_star: float
    follower_gaps: list  # J_v(u*, v* + d) - J_v*
    leader_gaps: list  # J_u(u* + d, v0(u* + d)) - J_u*

    @property
    def holds(self) -> bool:
        tol = 1e-9
        return (min(self.follower_gaps) >= -tol * max(1.0, self.J_v_star)
                and min(self.leader_gaps) >= -tol * max(1.0, self.J_u_star))


def optimality_check(sol: BvpSolution, deviations: int = 5, scale: float = 1e-2) -> OptimalityCheck:
    """Perturb each player's control with bump functions and compare costs."""
    tg, eps = sol.tg, sol.eps
    Ju, Jv = sol.costs
    fg, lg = [], []
    for j in range(1, deviations + 1):
        d = bump(j, tg.tf)
        pv = ControlPair(sol.u_star, lambda t, d=d: sol.v_star(t) + scale * d(t)[:, None] * np.ones(tg.s),
                         "follower-deviation", eps)
        fg.append(cost_of_pair(tg, eps, pv)[1] - Jv)
        lead = lambda t, d=d: sol.u_star(t) + scale * d(np.atleast_1d(t))[:, None] * np.ones(tg.r)
        pair = follower_response(tg, eps, lead)
        lg.append(cost_of_pair(tg, eps, pair)[0] - Ju)
    return OptimalityCheck(eps, Ju, Jv, fg, lg)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EpsMetrics:
    eps: float
    du_hat: float
    dv_hat: float
    J_u_star: float
    J_v_star: float
    J_u_hat: float
    J_v_hat: float
    J_u_tilde: float
    J_v_tilde: float
    J_u_bar0: float
    J_v_bar0: float

    @property
    def dJ_hat(self) -> tuple[float, float]:
        return abs(self.J_u_star - self.J_u_hat), abs(self.J_v_star - self.J_v_hat)

    @property
    def dJ_tilde(self) -> tuple[float, float]:
        return abs(self.J_u_star - self.J_u_tilde), abs(self.J_v_star - self.J_v_tilde)

    @property
    def dJ_bar0(self) -> tuple[float, float]:
        return abs(self.J_u_star - self.J_u_bar0), abs(self.J_v_star - self.J_v_bar0)

    @property
    def rel_hat(self) -> tuple[float, float]:
        """Relative cost errors of the hat pair, percent."""
        a, b = self.dJ_hat
        return 100.0 * a / self.J_u_star, 100.0 * b / self.J_v_star

    @property
    def rel_tilde(self) -> tuple[float, float]:
        a, b = self.dJ_tilde
        return 100.0 * a / self.J_u_star, 100.0 * b / self.J_v_star

    def row(self) -> dict:
        d = asdict(self)
        d["dJ_u_hat"], d["dJ_v_hat"] = self.dJ_hat
        d["dJ_u_tilde"], d["dJ_v_tilde"] = self.dJ_tilde
        d["dJ_u_bar0"], d["dJ_v_bar0"] = self.dJ_bar0
        d["rel_u_hat_pct"], d["rel_v_hat_pct"] = self.rel_hat
        d["rel_u_tilde_pct"], d["rel_v_tilde_pct"] = self.rel_tilde
        return d


@dataclass
class ComparisonRow:
    """Exact costs under the three weight regimes (leader weight, follower weight)."""

    eps: float
    J_M_11: float
    J_R_11: float
    J_M_e1: float  # leader cheap
    J_R_e1: float
    J_M_1e: float  # follower cheap
    J_R_1e: float

    @property
    def improvement_M(self) -> float:
        return 100.0 * (self.J_M_11 - self.J_M_e1) / self.J_M_11

    @property
    def improvement_R(self) -> float:
        return 100.0 * (self.J_R_11 - self.J_R_1e) / self.J_R_11

    @property
    def deterioration_M(self) -> float:
        """Leader's loss when the follower's control is cheap, percent."""
        return 100.0 * (self.J_M_1e - self.J_M_11) / self.J_M_11

    @property
    def deterioration_R(self) -> float:
        """Follower's loss when the leader's control is cheap, percent."""
        return 100.0 * (self.J_R_e1 - self.J_R_11) / self.J_R_11

    def row(self) -> dict:
        d = asdict(self)
        d.update(improvement_M_pct=self.improvement_M, improvement_R_pct=self.improvement_R,
                 deterioration_M_pct=self.deterioration_M, deterioration_R_pct=self.deterioration_R)
        return d


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    comparison: list = field(default_factory=list)

    def row_for(self, eps: float) -> EpsMetrics:
        for r in self.rows:
            if r.eps == eps:
                return r
        raise KeyError(eps)

    def write_csv(self, path) -> None:
        _write_rows(path, [r.row() for r in self.rows])

    def write_comparison_csv(self, path) -> None:
        _write_rows(path, [r.row() for r in self.comparison])


def _write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def eps_metrics(tg: TransformedGame, eps: float, expansion: Expansion1 | None = None,
                sol: BvpSolution | None = None) -> EpsMetrics:
    """All control and cost error quantities for one eps."""
    expansion = expansion or build_expansion(tg)
    sol = sol or solve(tg, eps)
    ex = exact_pair(sol)
    hat = hat_pair(expansion, eps)
    til = tilde_pair(expansion, eps)
    du, dv = control_errors(ex, hat, tg)
    Ju, Jv = sol.costs
    Jhu, Jhv = cost_of_pair(tg, eps, hat)
    Jtu, Jtv = cost_of_pair(tg, eps, til)
    J0u, J0v = eps_free_costs(expansion)
    return EpsMetrics(eps, du, dv, Ju, Jv, Jhu, Jhv, Jtu, Jtv, J0u, J0v)


def comparison_row(g: GameSpec, eps: float) -> ComparisonRow:
    e2 = eps * eps
    J11 = general_weight_solve(g.with_weights(1.0, 1.0)).costs
    Je1 = general_weight_solve(g.with_weights(e2, 1.0)).costs
    J1e = general_weight_solve(g.with_weights(1.0, e2)).costs
    return ComparisonRow(eps, J11[0], J11[1], Je1[0], Je1[1], J1e[0], J1e[1])


def cheap_control_comparison(g: GameSpec, eps_grid) -> list[ComparisonRow]:
    """Exact costs when neither, the leader, or the follower has cheap control."""
    if not g.G_uv.is_constant or np.any(g.G_uv(0.0) != 0.0):
        raise UnsupportedConfigurationError("the weight comparison requires G_uv identically zero")
    return [comparison_row(g, float(e)) for e in eps_grid]


def metrics_report(g: GameSpec, eps_grid, comparison_grid=None) -> MetricsReport:
    tg = transform_game(g)
    expansion = build_expansion(tg)
    rows = [eps_metrics(tg, float(e), expansion) for e in eps_grid]
    comp = cheap_control_comparison(g, comparison_grid) if comparison_grid is not None else []
    return MetricsReport(rows, comp)
