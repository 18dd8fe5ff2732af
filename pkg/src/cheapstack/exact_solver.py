"""Exact open-loop Stackelberg solution for a given follower cost weight eps**2.

The necessary and sufficient optimality conditions form a linear two-point
boundary-value problem in (z, lambda_u, lambda_v, mu). It is solved in the
scaled block variables

    (z1, z2, lam_u1, lam_u2, lam_v1, lam_v2, mu1, mu2),
    lambda_u = (lam_u1; eps lam_u2),  lambda_v = (lam_v1; eps lam_v2),

where the fast rows carry a factor eps in front of the derivative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConvergenceError, UnsupportedConfigurationError
from .model import GameSpec, TransformedGame, sample_times, transform_game
from .shooting import LinearBvp, LinearSolution, solve_linear_bvp, three_zone_mesh

EPS_MIN = 1e-3
ODE_TOL = 1e-10
BOUNDARY_TOL = 1e-12
MAX_REFINE = 6
QUAD_ORDER = 8

COMPONENTS = ("z1", "z2", "lam_u1", "lam_u2", "lam_v1", "lam_v2", "mu1", "mu2")


def component_slices(n: int, s: int) -> dict[str, slice]:
    k = n - s
    out = {}
    for i, name in enumerate(COMPONENTS):
        base = (i // 2) * n
        out[name] = slice(base, base + k) if i % 2 == 0 else slice(base + k, base + n)
    return out


@dataclass(frozen=True)
class StackelbergBvp:
    """Scaled optimality system for one value of eps."""

    tg: TransformedGame
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def dim(self) -> int:
        return 4 * self.tg.n

    @cached_property
    def slices(self) -> dict[str, slice]:
        return component_slices(self.tg.n, self.tg.s)

    @cached_property
    def row_scale(self) -> np.ndarray:
        """Factor in front of each derivative (1 for slow rows, eps for fast rows)."""
        e = np.ones(self.dim)
        for name in ("z2", "lam_u2", "lam_v2", "mu2"):
            e[self.slices[name]] = self.eps
        return e

    def scaled_rhs_matrix(self, t: float) -> np.ndarray:
        """Right-hand side matrix F(t) of  E y' = F(t) y."""
        f = self.tg.frame(t)
        e = self.eps
        sl = self.slices
        F = np.zeros((self.dim, self.dim))

        def put(row, col, m):
            F[sl[row], sl[col]] += m

        put("z1", "z1", f.A1); put("z1", "z2", f.A2)
        put("z1", "lam_u1", -f.S_u1); put("z1", "lam_u2", -e * f.S_u2)
        put("z2", "z1", e * f.A3); put("z2", "z2", e * f.A4)
        put("z2", "lam_u1", -e * f.S_u2.T); put("z2", "lam_u2", -e * e * f.S_u3)
        put("z2", "lam_v2", -np.eye(self.tg.s))
        put("lam_u1", "z1", -f.D_u1); put("lam_u1", "z2", -f.D_u2)
        put("lam_u1", "lam_u1", -f.A1.T); put("lam_u1", "lam_u2", -e * f.A3.T)
        put("lam_u1", "mu1", f.D_v1)
        put("lam_u2", "z1", -f.D_u2.T); put("lam_u2", "z2", -f.D_u3)
        put("lam_u2", "lam_u1", -f.A2.T); put("lam_u2", "lam_u2", -e * f.A4.T)
        put("lam_u2", "mu2", f.D_v2)
        put("lam_v1", "z1", -f.D_v1); put("lam_v1", "lam_v1", -f.A1.T)
        put("lam_v1", "lam_v2", -e * f.A3.T)
        put("lam_v2", "z2", -f.D_v2); put("lam_v2", "lam_v1", -f.A2.T)
        put("lam_v2", "lam_v2", -e * f.A4.T)
        put("mu1", "mu1", f.A1); put("mu1", "mu2", f.A2)
        put("mu2", "lam_u2", np.eye(self.tg.s)); put("mu2", "lam_v2", -e ** 4 * f.G_uv)
        put("mu2", "mu1", e * f.A3); put("mu2", "mu2", e * f.A4)
        return F

    def matrix(self, t: float) -> np.ndarray:
        return self.scaled_rhs_matrix(t) / self.row_scale[:, None]

    def linear_bvp(self) -> LinearBvp:
        n = self.tg.n
        left = np.r_[np.arange(0, n), np.arange(3 * n, 4 * n)]
        right = np.arange(n, 3 * n)
        return LinearBvp(
            matrix=self.matrix, dim=self.dim, tf=self.tg.tf,
            left_index=left, left_value=np.r_[self.tg.z0, np.zeros(n)],
            right_index=right, right_value=np.zeros(2 * n), constant=self.tg.is_constant,
        )


def assemble_bvp(tg: TransformedGame, eps: float) -> StackelbergBvp:
    return StackelbergBvp(tg, float(eps))


def spectral_rates(matrix, tf: float, samples: int = 11) -> tuple[float, float]:
    """(largest eigenvalue modulus, slowest decay among the fast modes) over sample times."""
    rho, nu = 0.0, np.inf
    for t in sample_times(tf, samples):
        lam = np.linalg.eigvals(matrix(t))
        r = float(np.max(np.abs(lam)))
        rho = max(rho, r)
        re = np.abs(lam.real)
        fast = re[re >= 0.25 * r]
        if fast.size:
            nu = min(nu, float(fast.min()))
    if not np.isfinite(nu):
        nu = max(rho, 1e-12)
    return rho, nu


def default_mesh(matrix, tf: float, refine: float = 1.0) -> np.ndarray:
    """Three-zone mesh: layer zones resolve the fastest mode, the interior is coarser."""
    rho, nu = spectral_rates(matrix, tf)
    rho = max(rho, 1e-12)
    cap = tf / 40.0
    h_layer = min(0.5 / rho, cap) / refine
    h_int = min(4.0 / rho, cap) / refine
    width = 40.0 / nu
    return three_zone_mesh(tf, h_layer, h_int, width)


@dataclass
class Diagnostics:
    ode_residual: float
    boundary_residual: float
    stationarity_residual: float
    mesh_size: int
    refinements: int
    seconds: float

    def as_dict(self) -> dict:
        return dict(ode_residual=self.ode_residual, boundary_residual=self.boundary_residual,
                    stationarity_residual=self.stationarity_residual, mesh_size=self.mesh_size,
                    refinements=self.refinements, seconds=self.seconds)


class BvpSolution:
    """Solved scaled system with controls, costs and diagnostics."""

    def __init__(self, bvp: StackelbergBvp, sol: LinearSolution, diagnostics: Diagnostics,
                 quad_order: int = QUAD_ORDER):
        self.bvp = bvp
        self.sol = sol
        self.diagnostics = diagnostics
        self.quad_order = quad_order

    @property
    def tg(self) -> TransformedGame:
        return self.bvp.tg

    @property
    def eps(self) -> float:
        return self.bvp.eps

    @property
    def mesh(self) -> np.ndarray:
        return self.sol.nodes

    def components(self, t=None) -> dict[str, np.ndarray]:
        y = self.sol.values if t is None else np.atleast_2d(self.sol(np.atleast_1d(t)))
        return {k: y[:, s] for k, s in self.bvp.slices.items()}

    def state(self, t) -> np.ndarray:
        y = self.sol(np.atleast_1d(t))
        n = self.tg.n
        return y[:, :n]

    def unscaled(self, y: np.ndarray) -> dict[str, np.ndarray]:
        """(z, lambda_u, lambda_v, mu) in the unscaled variables."""
        n, k, e = self.tg.n, self.tg.k, self.eps
        z = y[:, :n]
        lu = y[:, n:2 * n].copy()
        lv = y[:, 2 * n:3 * n].copy()
        lu[:, k:] *= e
        lv[:, k:] *= e
        return {"z": z, "lambda_u": lu, "lambda_v": lv, "mu": y[:, 3 * n:]}

    def controls_from_values(self, t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sl = self.bvp.slices
        e = self.eps
        u = np.empty((t.size, self.tg.r))
        for i, ti in enumerate(t):
            f = self.tg.frame(ti)
            u[i] = -f.B_u1.T @ y[i, sl["lam_u1"]] - e * f.B_u2.T @ y[i, sl["lam_u2"]]
        v = -y[:, sl["lam_v2"]] / e
        return u, v

    def u_star(self, t=None) -> np.ndarray:
        t = self.mesh if t is None else np.atleast_1d(np.asarray(t, dtype=float))
        return self.controls_from_values(t, self.sol(t))[0]

    def v_star(self, t=None) -> np.ndarray:
        t = self.mesh if t is None else np.atleast_1d(np.asarray(t, dtype=float))
        return self.controls_from_values(t, self.sol(t))[1]

    def control_functions(self):
        """Dense evaluators t -> u*(t), t -> v*(t)."""
        return (lambda t: self.u_star(t)), (lambda t: self.v_star(t))

    @cached_property
    def costs(self) -> tuple[float, float]:
        return optimal_costs(self)

    def cost_at_order(self, order: int) -> tuple[float, float]:
        return optimal_costs(self, order)

    def trajectory_table(self, t=None) -> np.ndarray:
        """Rows t, z, lambda_u, lambda_v (scaled), mu, u, v."""
        t = self.mesh if t is None else np.atleast_1d(np.asarray(t, dtype=float))
        y = self.sol(t)
        u, v = self.controls_from_values(t, y)
        return np.column_stack([t, y, u, v])

    def trajectory_header(self) -> list[str]:
        n, r, s = self.tg.n, self.tg.r, self.tg.s
        cols = ["t"]
        for name in ("z", "lambda_u", "lambda_v", "mu"):
            cols += [f"{name}_{i + 1}" for i in range(n)]
        cols += [f"u_{i + 1}" for i in range(r)] + [f"v_{i + 1}" for i in range(s)]
        return cols


def _integrands(tg: TransformedGame, eps: float, t, z, u, v):
    ju = np.empty(t.size)
    jv = np.empty(t.size)
    e2 = eps * eps
    for i, ti in enumerate(t):
        f = tg.frame(ti)
        ju[i] = z[i] @ f.D_u @ z[i] + u[i] @ u[i] + e2 * v[i] @ f.G_uv @ v[i]
        jv[i] = z[i] @ f.D_v @ z[i] + e2 * v[i] @ v[i] + u[i] @ f.G_vu @ u[i]
    return ju, jv


def optimal_costs(sol: BvpSolution, quad_order: int | None = None) -> tuple[float, float]:
    """J_u*, J_v* by composite Gauss-Legendre quadrature on the solver mesh."""
    q = quad_order or sol.quad_order
    t, w, y = sol.sol.gauss_points(q)
    u, v = sol.controls_from_values(t, y)
    ju, jv = _integrands(sol.tg, sol.eps, t, y[:, : sol.tg.n], u, v)
    return 0.5 * float(w @ ju), 0.5 * float(w @ jv)


def leader_cost_costate_form(sol: BvpSolution, quad_order: int | None = None) -> float:
    """J_u* written through the costates (independent rearrangement of the integrand)."""
    q = quad_order or sol.quad_order
    t, w, y = sol.sol.gauss_points(q)
    sl = sol.bvp.slices
    e = sol.eps
    n = sol.tg.n
    vals = np.empty(t.size)
    for i, ti in enumerate(t):
        f = sol.tg.frame(ti)
        z = y[i, :n]
        l1, l2, lv2 = y[i, sl["lam_u1"]], y[i, sl["lam_u2"]], y[i, sl["lam_v2"]]
        vals[i] = (z @ f.D_u @ z + l1 @ f.S_u1 @ l1 + 2 * e * l1 @ f.S_u2 @ l2
                   + e * e * l2 @ f.S_u3 @ l2 + lv2 @ f.G_uv @ lv2)
    return 0.5 * float(w @ vals)


def extract_optimal_controls(sol: BvpSolution) -> tuple[np.ndarray, np.ndarray]:
    """u*, v* at the mesh nodes."""
    return sol.controls_from_values(sol.mesh, sol.sol.values)


def stationarity_residual(sol: BvpSolution) -> float:
    """max |eps^2 v* + B_v' lambda_v| over the mesh (unscaled costate)."""
    y = sol.sol.values
    _, v = sol.controls_from_values(sol.mesh, y)
    lv = sol.unscaled(y)["lambda_v"]
    r = sol.eps ** 2 * v + lv @ sol.tg.B_v
    return float(np.max(np.abs(r)))


def _solve_with_refinement(lbvp: LinearBvp, mesh_fn, row_scale, rate, tol, mesh=None, refine=1.0):
    t0 = time.perf_counter()
    level = 0
    while True:
        nodes = mesh if mesh is not None else mesh_fn(refine * 2 ** level)
        lsol = solve_linear_bvp(lbvp, nodes)
        res = lsol.ode_residual(row_scale, rate)
        if res <= tol or mesh is not None:
            break
        if level >= MAX_REFINE:
            raise ConvergenceError(f"ODE residual {res:.3e} above tolerance {tol:.1e} after "
                                   f"{MAX_REFINE} refinements", achieved=res)
        level += 1
    return lsol, res, level, time.perf_counter() - t0


def solve_linear_bvp_game(bvp: StackelbergBvp, tol: float = ODE_TOL, mesh_hint: float = 1.0,
                          mesh: np.ndarray | None = None, eps_min: float = EPS_MIN,
                          quad_order: int = QUAD_ORDER) -> BvpSolution:
    """Solve the scaled optimality system on a layer-resolving mesh."""
    if bvp.eps < eps_min:
        raise UnsupportedConfigurationError(
            f"eps={bvp.eps:g} is below eps_min={eps_min:g}; pass a smaller eps_min to override")
    lbvp = bvp.linear_bvp()
    rho, _ = spectral_rates(bvp.matrix, bvp.tg.tf)
    lsol, res, level, secs = _solve_with_refinement(
        lbvp, lambda r: default_mesh(bvp.matrix, bvp.tg.tf, r), bvp.row_scale, rho, tol,
        mesh=mesh, refine=mesh_hint)
    diag = Diagnostics(res, lsol.boundary_residual(), 0.0, lsol.nodes.size, level, secs)
    out = BvpSolution(bvp, lsol, diag, quad_order)
    diag.stationarity_residual = stationarity_residual(out)
    return out


def solve(g_or_tg, eps: float, **kw) -> BvpSolution:
    """Convenience: transform (if needed), assemble and solve."""
    tg = g_or_tg if isinstance(g_or_tg, TransformedGame) else transform_game(g_or_tg)
    return solve_linear_bvp_game(assemble_bvp(tg, eps), **kw)


# ---------------------------------------------------------------------------
# fast-mode spectrum


@dataclass(frozen=True)
class SpectrumReport:
    times: np.ndarray
    eigenvalues: np.ndarray  # (len(times), 4s)
    alpha: float  # largest alpha with the 2s/2s split at every time
    s: int

    def counts(self, alpha: float) -> list[tuple[int, int]]:
        return [(int(np.sum(ev.real >= alpha)), int(np.sum(ev.real <= -alpha))) for ev in self.eigenvalues]

    def split_holds(self, alpha: float) -> bool:
        return all(p == 2 * self.s and m == 2 * self.s for p, m in self.counts(alpha))


def fast_matrix(tg: TransformedGame, t: float, eps: float) -> np.ndarray:
    """4s x 4s fast-mode matrix in the order (z2, lam_u2, lam_v2, mu2)."""
    f = tg.frame(t)
    s = tg.s
    I, Z = np.eye(s), np.zeros((s, s))
    e = eps
    return np.block([
        [e * f.A4, -e * e * f.S_u3, -I, Z],
        [-f.D_u3, -e * f.A4.T, Z, f.D_v2],
        [-f.D_v2, Z, -e * f.A4.T, Z],
        [Z, I, -e ** 4 * f.G_uv, e * f.A4],
    ])


def _fast_eigenvalues(M: np.ndarray, s: int) -> np.ndarray:
    # (z2, lam_v2) does not see (lam_u2, mu2) when eps^2 S_u3 = 0; the full matrix is
    # then defective and eigvals loses half the digits, so split the triangular blocks
    a = np.r_[0:s, 2 * s:3 * s]
    b = np.r_[s:2 * s, 3 * s:4 * s]
    if not np.any(M[np.ix_(a, b)]):
        ev = np.r_[np.linalg.eigvals(M[np.ix_(a, a)]), np.linalg.eigvals(M[np.ix_(b, b)])]
    else:
        ev = np.linalg.eigvals(M)
    return np.sort_complex(ev)


def fast_spectrum(tg: TransformedGame, eps: float, t_samples=11) -> SpectrumReport:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    ts = sample_times(tg.tf, t_samples) if np.isscalar(t_samples) else np.asarray(t_samples, float)
    s = tg.s
    evs = np.array([_fast_eigenvalues(fast_matrix(tg, t, eps), s) for t in ts])
    alpha = np.inf
    for ev in evs:
        re = np.sort(ev.real)
        lo, hi = re[: 2 * s], re[2 * s:]
        if np.any(lo >= 0) or np.any(hi <= 0):
            alpha = 0.0
            break
        alpha = min(alpha, float(min(-lo.max(), hi.min())))
    return SpectrumReport(ts, evs, float(alpha), s)


# ---------------------------------------------------------------------------
# generalized control weights, original coordinates


class GeneralSolution:
    """Exact solution for control weights (alpha, beta) in original coordinates."""

    def __init__(self, g: GameSpec, sol: LinearSolution, diagnostics: Diagnostics, quad_order: int):
        self.game = g
        self.sol = sol
        self.diagnostics = diagnostics
        self.quad_order = quad_order

    @property
    def mesh(self):
        return self.sol.nodes

    def controls_from_values(self, t, y):
        g = self.game
        n = g.n
        u = np.empty((t.size, g.r))
        v = np.empty((t.size, g.s))
        for i, ti in enumerate(t):
            u[i] = -g.B_u_cal(ti).T @ y[i, n:2 * n] / g.weight_u
            v[i] = -g.B_v_cal(ti).T @ y[i, 2 * n:3 * n] / g.weight_v
        return u, v

    def costs_at_order(self, order: int) -> tuple[float, float]:
        g = self.game
        t, w, y = self.sol.gauss_points(order)
        u, v = self.controls_from_values(t, y)
        Z = y[:, : g.n]
        ju = np.empty(t.size)
        jv = np.empty(t.size)
        for i, ti in enumerate(t):
            ju[i] = Z[i] @ g.D_u_cal(ti) @ Z[i] + g.weight_u * u[i] @ u[i]
            jv[i] = Z[i] @ g.D_v_cal(ti) @ Z[i] + g.weight_v * v[i] @ v[i] + u[i] @ g.G_vu(ti) @ u[i]
        return 0.5 * float(w @ ju), 0.5 * float(w @ jv)

    @cached_property
    def costs(self) -> tuple[float, float]:
        return self.costs_at_order(self.quad_order)


def general_matrix(g: GameSpec, t: float) -> np.ndarray:
    n = g.n
    A = g.A_cal(t)
    Bu = g.B_u_cal(t)
    Bv = g.B_v_cal(t)
    Su = Bu @ Bu.T / g.weight_u
    Sv = Bv @ Bv.T / g.weight_v
    Du = g.D_u_cal(t)
    Dv = g.D_v_cal(t)
    Z = np.zeros((n, n))
    return np.block([
        [A, -Su, -Sv, Z],
        [-Du, -A.T, Z, Dv],
        [-Dv, Z, -A.T, Z],
        [Z, Sv, Z, A],
    ])


def general_weight_solve(g: GameSpec, tol: float = ODE_TOL, mesh: np.ndarray | None = None,
                         mesh_hint: float = 1.0, quad_order: int = QUAD_ORDER) -> GeneralSolution:
    """Exact costs for leader weight g.weight_u and follower weight g.weight_v."""
    ts = sample_times(g.tf, 11)
    if any(np.any(g.G_uv(t) != 0.0) for t in ts) or not g.G_uv.is_constant:
        raise UnsupportedConfigurationError("general-weight solve requires G_uv identically zero")
    n = g.n
    lbvp = LinearBvp(
        matrix=lambda t: general_matrix(g, t), dim=4 * n, tf=g.tf,
        left_index=np.r_[np.arange(n), np.arange(3 * n, 4 * n)], left_value=np.r_[g.Z0, np.zeros(n)],
        right_index=np.arange(n, 3 * n), right_value=np.zeros(2 * n), constant=g.is_constant,
    )
    rho, _ = spectral_rates(lbvp.matrix, g.tf)
    # residual measured relative to the fastest rate, as in the scaled problem
    scale = np.full(4 * n, 1.0 / max(1.0, rho))
    lsol, res, level, secs = _solve_with_refinement(
        lbvp, lambda r: default_mesh(lbvp.matrix, g.tf, r), scale, rho, tol, mesh=mesh, refine=mesh_hint)
    diag = Diagnostics(res, lsol.boundary_residual(), 0.0, lsol.nodes.size, level, secs)
    return GeneralSolution(g, lsol, diag, quad_order)
