"""First-order boundary-function expansion of the cheap-follower optimality system.

The solution of the scaled system is approximated by

    outer(t) + left(t/eps) + right((t - tf)/eps),

each part carrying an order-0 and an order-1 term. The outer terms solve two
eps-free reduced boundary-value problems of dimension 4(n - s) plus algebraic
relations. The layer terms solve constant-coefficient linear ODEs on the
half-lines xi >= 0 and rho <= 0.

Every layer term is represented exactly as ``C @ expm(H x) @ w0`` for one
generator (H, w0) per endpoint. Forced decaying modes become extra generator
states, bounded solutions of growing modes are obtained from a Sylvester
equation, tail integrals from H^{-1}, and products with the stretched variable
from a block-Jordan copy of the generator. No quadrature or truncation is
involved, so the terms satisfy their defining ODEs to rounding error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import (AssumptionError, ConvergenceError, UnsolvableProblemError,
                     UnsupportedConfigurationError)
from .exact_solver import COMPONENTS, QUAD_ORDER
from .model import (GameSpec, MatrixFunction, TransformedGame, build_reduction, sample_times,
                    transform_game)
from .shooting import LinearBvp, LinearSolution, gauss_legendre, solve_linear_bvp

OUTER_TOL = 1e-11
UNDERFLOW = 745.0
EXPM_CHUNK = 4096


# ---------------------------------------------------------------------------
# small matrix helpers


def sqrt_spd(M: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and its inverse by spectral decomposition."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    if lam.min() <= tol * scale:
        raise ValueError(f"matrix is not positive definite (min eigenvalue {lam.min():.3e})")
    r = np.sqrt(lam)
    return (V * r) @ V.T, (V / r) @ V.T


def lyapunov_layer_integral(S: np.ndarray, D: np.ndarray) -> np.ndarray:
    """P = int_0^inf e^{-S s} D e^{-S s} ds, i.e. the solution of S P + P S = D."""
    S = np.asarray(S, dtype=float)
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    if lam.min() <= 0:
        raise ValueError("S must be positive definite")
    P = sla.solve_continuous_lyapunov(S, np.asarray(D, dtype=float))
    return 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# exact layer generators


class _GeneratorBuilder:
    """Incrementally assembled block lower-triangular generator w' = H w."""

    def __init__(self):
        self.H = np.zeros((0, 0))
        self.w0 = np.zeros(0)
        self.xi_base: int | None = None

    @property
    def m(self) -> int:
        return self.w0.size

    def fit(self, C: np.ndarray) -> np.ndarray:
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[1] == self.m:
            return C
        out = np.zeros((C.shape[0], self.m))
        out[:, : C.shape[1]] = C
        return out

    def zeros(self, rows: int) -> np.ndarray:
        return np.zeros((rows, self.m))

    def value0(self, C: np.ndarray) -> np.ndarray:
        return self.fit(C) @ self.w0

    def add_state(self, own: np.ndarray, coupling: np.ndarray, init: np.ndarray) -> np.ndarray:
        """Append q' = own q + coupling w, q(0) = init; return the selector of q."""
        s = own.shape[0]
        m = self.m
        coupling = self.fit(coupling)
        H = np.zeros((m + s, m + s))
        H[:m, :m] = self.H
        H[m:, :m] = coupling
        H[m:, m:] = own
        self.H = H
        self.w0 = np.r_[self.w0, np.asarray(init, dtype=float).reshape(s)]
        sel = np.zeros((s, m + s))
        sel[:, m:] = np.eye(s)
        return sel

    def add_xi_copies(self) -> None:
        """Append q' = H q + w, q(0) = 0, so that q(x) = x w(x)."""
        m = self.m
        H = np.zeros((2 * m, 2 * m))
        H[:m, :m] = self.H
        H[m:, :m] = np.eye(m)
        H[m:, m:] = self.H
        self.H = H
        self.w0 = np.r_[self.w0, np.zeros(m)]
        self.xi_base = m

    def xi_times(self, C: np.ndarray) -> np.ndarray:
        """Output matrix of x * (C w)(x); C may only involve states present at the copy."""
        if self.xi_base is None:
            raise RuntimeError("add_xi_copies must be called first")
        C = np.atleast_2d(C)
        if C.shape[1] > self.xi_base:
            raise ValueError("output involves states added after the stretched-variable copy")
        out = self.zeros(C.shape[0])
        out[:, self.xi_base: self.xi_base + C.shape[1]] = C
        return out

    def bounded(self, K: np.ndarray, C: np.ndarray) -> np.ndarray:
        """X with X w the unique decaying solution of q' = K q + C w.

        Requires the spectra of K and H to be disjoint; X solves K X - X H = -C.
        """
        C = self.fit(C)
        if self.m == 0:
            return C.copy()
        return sla.solve_sylvester(K, -self.H, -C)

    def tail(self, C: np.ndarray) -> np.ndarray:
        """Output matrix of int_x^inf (C w)(s) ds for a Hurwitz generator."""
        C = self.fit(C)
        if self.m == 0:
            return C.copy()
        return -np.linalg.solve(self.H.T, C.T).T


@dataclass(frozen=True)
class LayerBank:
    """Named layer terms C_k expm(H x) w0 on x >= 0 (left) or x <= 0 (right)."""

    H: np.ndarray
    w0: np.ndarray
    outputs: dict
    side: str  # "left" or "right"

    @cached_property
    def rate(self) -> float:
        """Slowest exponential rate of the generator."""
        if self.w0.size == 0:
            return np.inf
        return float(np.min(np.abs(np.linalg.eigvals(self.H).real)))

    def _check_domain(self, x: np.ndarray) -> None:
        if self.side == "left" and np.any(x < 0):
            raise ValueError("left-layer coordinate must be non-negative")
        if self.side == "right" and np.any(x > 0):
            raise ValueError("right-layer coordinate must be non-positive")

    def states(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self._check_domain(x)
        m = self.w0.size
        out = np.zeros((x.size, m))
        if m == 0:
            return out
        live = np.abs(x) * self.rate < UNDERFLOW
        xs = x[live]
        if xs.size:
            uniq, inv = np.unique(xs, return_inverse=True)
            W = np.empty((uniq.size, m))
            for a in range(0, uniq.size, EXPM_CHUNK):
                b = min(a + EXPM_CHUNK, uniq.size)
                E = sla.expm(self.H[None] * uniq[a:b, None, None])
                W[a:b] = E @ self.w0
            out[live] = W[inv.ravel()]
        return out

    def width(self, name: str) -> int:
        return self.outputs[name].shape[0]

    def evaluate(self, x, names=None) -> dict:
        W = self.states(x)
        names = self.outputs if names is None else names
        return {k: W[:, : self.outputs[k].shape[1]] @ self.outputs[k].T for k in names}

    def __call__(self, name: str, x) -> np.ndarray:
        return self.evaluate(x, [name])[name]

    def derivative(self, name: str, x) -> np.ndarray:
        """Exact d/dx of a stored term."""
        W = self.states(x)
        C = self.outputs[name]
        w = C.shape[1]
        return W[:, :w] @ (C @ self.H[:w, :w]).T

    def decay_envelope(self, name: str, x, rate: float) -> float:
        """max_x |term(x)| exp(rate |x|): finite and bounded iff the term decays at least that fast."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.linalg.norm(self(name, x), axis=1)
        return float(np.max(v * np.exp(rate * np.abs(x))))

    def to_dict(self) -> dict:
        return {"side": self.side, "H": self.H.tolist(), "w0": self.w0.tolist(),
                "outputs": {k: v.tolist() for k, v in self.outputs.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerBank":
        m = len(d["w0"])
        outs = {k: np.asarray(v, dtype=float).reshape(len(v), -1) if len(v) else np.zeros((0, m))
                for k, v in d["outputs"].items()}
        return cls(np.asarray(d["H"], dtype=float).reshape(m, m), np.asarray(d["w0"], dtype=float),
                   outs, d["side"])


def _theta_block(b: _GeneratorBuilder, S, Sinv, Du3, forcing: dict, side: str, first, second) -> dict:
    """Decaying solution of the fast layer system with forcing, via the Theta decoupling.

    The system is z' = -lv + Fz, lv' = -S^2 z + Flv, mu' = lu + Fmu,
    lu' = -Du3 z + S^2 mu + Flu. On the left, ``first``/``second`` fix z(0)
    and mu(0); on the right they fix lv(0) and lu(0).
    """
    s = S.shape[0]
    F = {k: b.fit(forcing[k]) if k in forcing else b.zeros(s) for k in ("z", "lv", "mu", "lu")}
    f_x = 0.5 * F["z"] - 0.5 * Sinv @ F["lv"]
    f_y = S @ F["z"] + F["lv"]
    if side == "left":
        Cx = b.bounded(S, f_x)
        Cy = b.add_state(-S, f_y, 2.0 * S @ (first - b.value0(Cx)))
    else:
        Cy = b.bounded(-S, f_y)
        Cx = b.add_state(S, f_x, Sinv @ (0.5 * b.value0(Cy) - first))
    Cx, Cy = b.fit(Cx), b.fit(Cy)
    Cz = Cx + 0.5 * Sinv @ Cy
    Clv = -S @ Cx + 0.5 * Cy
    f_eta = 0.5 * b.fit(F["mu"]) - 0.5 * Sinv @ b.fit(F["lu"]) + 0.5 * Sinv @ Du3 @ Cz
    f_zeta = S @ b.fit(F["mu"]) + b.fit(F["lu"]) - Du3 @ Cz
    if side == "left":
        Czeta = b.bounded(S, f_zeta)
        Ceta = b.add_state(-S, f_eta, second - 0.5 * Sinv @ b.value0(Czeta))
    else:
        Ceta = b.bounded(-S, f_eta)
        Czeta = b.add_state(S, f_zeta, 2.0 * (second + S @ b.value0(Ceta)))
    Ceta, Czeta = b.fit(Ceta), b.fit(Czeta)
    return {
        "x": Cx, "y": Cy, "eta": Ceta, "zeta": Czeta,
        "z": Cz, "lv": Clv, "mu": Ceta + 0.5 * Sinv @ Czeta, "lu": -S @ Ceta + 0.5 * Czeta,
        "f_x": f_x, "f_y": f_y, "f_eta": f_eta, "f_zeta": f_zeta,
    }


# ---------------------------------------------------------------------------
# outer solution


def reduced_matrix(tg: TransformedGame, t: float) -> np.ndarray:
    """Coefficient matrix of the eps-free slow system in (z1, lam_u1, lam_v1, mu1)."""
    f = tg.frame(t)
    W = np.linalg.solve(f.D_v2, f.A2.T)  # D_v2^{-1} A2'
    Q = f.A2 @ W
    return np.block([
        [f.A1, -f.S_u1, -Q, np.zeros_like(f.A1)],
        [-f.D_u1, -f.A1.T, f.D_u2 @ W, f.D_v1],
        [-f.D_v1, np.zeros_like(f.A1), -f.A1.T, np.zeros_like(f.A1)],
        [W.T @ f.D_u2.T, Q, -W.T @ f.D_u3 @ W, f.A1],
    ])


def _reduced_mesh(matrix, tf: float, nodes: int | None = None) -> np.ndarray:
    if nodes is None:
        rho = max(float(np.max(np.abs(np.linalg.eigvals(matrix(t))))) for t in sample_times(tf, 11))
        nodes = max(41, int(np.ceil(2.0 * rho * tf)) + 1)
    return np.linspace(0.0, tf, nodes)


def _solve_reduced(tg: TransformedGame, z1_0, mu1_0, nodes: int | None = None,
                   what: str = "reduced outer problem") -> LinearSolution:
    k = tg.k
    lbvp = LinearBvp(
        matrix=lambda t: reduced_matrix(tg, t), dim=4 * k, tf=tg.tf,
        left_index=np.r_[np.arange(k), np.arange(3 * k, 4 * k)], left_value=np.r_[z1_0, mu1_0],
        right_index=np.arange(k, 3 * k), right_value=np.zeros(2 * k), constant=tg.is_constant,
    )
    try:
        sol = solve_linear_bvp(lbvp, _reduced_mesh(lbvp.matrix, tg.tf, nodes))
    except UnsolvableProblemError as exc:
        raise UnsolvableProblemError(f"{what} has no unique solution: {exc}") from None
    res = sol.ode_residual()
    scale = 1.0 + float(np.max(np.abs(sol.values)))
    if res > OUTER_TOL * scale * 1e3:
        raise ConvergenceError(f"{what}: ODE residual {res:.2e}", achieved=res)
    return sol


def _algebraic_rates(tg: TransformedGame, t: float, y, z2, mu2):
    """Exact time derivatives of the order-0 algebraic terms z2 and mu2.

    Differentiates D_v2 z2 = -A2' lv1 and D_v2 mu2 = D_u2' z1 + D_u3 z2 + A2' lu1,
    taking the slow derivatives from the reduced ODE.
    """
    f = tg.frame(t)
    k = tg.k
    z1, lu1, lv1 = y[:k], y[k:2 * k], y[2 * k:3 * k]
    dz1, dlu1, dlv1, _ = np.split(reduced_matrix(tg, t) @ y, 4)
    dz2 = np.linalg.solve(f.D_v2, -f.dA2.T @ lv1 - f.A2.T @ dlv1 - f.dD_v2 @ z2)
    dmu2 = np.linalg.solve(f.D_v2, f.dD_u2.T @ z1 + f.D_u2.T @ dz1 + f.dD_u3 @ z2
                           + f.D_u3 @ dz2 + f.dA2.T @ lu1 + f.A2.T @ dlu1 - f.dD_v2 @ mu2)
    return dz2, dmu2




@dataclass
class OuterSolution:
    """Order-0 and order-1 outer terms; slow parts as solved reduced problems."""

    tg: TransformedGame
    slow0: LinearSolution
    slow1: LinearSolution | None = None

    def _split(self, y):
        k = self.tg.k
        return y[:, :k], y[:, k:2 * k], y[:, 2 * k:3 * k], y[:, 3 * k:]

    def evaluate(self, t, order: int = 1) -> tuple[dict, dict | None]:
        """Outer terms at times t: (order-0 dict, order-1 dict or None)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tg = self.tg
        s = tg.s
        N = t.size
        y0 = self.slow0(t)
        z1, lu1, lv1, mu1 = self._split(y0)
        z2 = np.empty((N, s))
        mu2 = np.empty((N, s))
        want1 = order >= 1 and self.slow1 is not None
        if want1:
            y1 = self.slow1(t)
            z11, lu11, lv11, mu11 = self._split(y1)
            z21 = np.empty((N, s))
            mu21 = np.empty((N, s))
            lv21 = np.empty((N, s))
            lu21 = np.empty((N, s))
        if tg.is_constant:
            f = tg.frame(0.0)
            Winv = np.linalg.inv(f.D_v2)
            z2 = -lv1 @ (Winv @ f.A2.T).T
            mu2 = (z1 @ f.D_u2 + z2 @ f.D_u3.T + lu1 @ f.A2) @ Winv.T
            if want1:
                dy = y0 @ reduced_matrix(tg, 0.0).T
                dz1, dlu1, dlv1, _ = self._split(dy)
                dz2 = -dlv1 @ (Winv @ f.A2.T).T
                dmu2 = (dz1 @ f.D_u2 + dz2 @ f.D_u3.T + dlu1 @ f.A2) @ Winv.T
                lv21 = z1 @ f.A3.T + z2 @ f.A4.T - lu1 @ f.S_u2 - dz2
                lu21 = dmu2 - mu1 @ f.A3.T - mu2 @ f.A4.T
                z21 = -lv11 @ (Winv @ f.A2.T).T
                mu21 = (z11 @ f.D_u2 + z21 @ f.D_u3.T + lu11 @ f.A2) @ Winv.T
        for i, ti in enumerate(() if tg.is_constant else t):
            f = tg.frame(ti)
            z2[i] = -np.linalg.solve(f.D_v2, f.A2.T @ lv1[i])
            mu2[i] = np.linalg.solve(f.D_v2, f.D_u2.T @ z1[i] + f.D_u3 @ z2[i] + f.A2.T @ lu1[i])
            if not want1:
                continue
            dz2, dmu2 = _algebraic_rates(tg, ti, y0[i], z2[i], mu2[i])
            lv21[i] = f.A3 @ z1[i] + f.A4 @ z2[i] - f.S_u2.T @ lu1[i] - dz2
            lu21[i] = dmu2 - f.A3 @ mu1[i] - f.A4 @ mu2[i]
            z21[i] = -np.linalg.solve(f.D_v2, f.A2.T @ lv11[i])
            mu21[i] = np.linalg.solve(f.D_v2, f.D_u2.T @ z11[i] + f.D_u3 @ z21[i] + f.A2.T @ lu11[i])
        zero = np.zeros((N, s))
        o0 = dict(z1=z1, z2=z2, lam_u1=lu1, lam_u2=zero, lam_v1=lv1, lam_v2=zero.copy(), mu1=mu1, mu2=mu2)
        if not want1:
            return o0, None
        o1 = dict(z1=z11, z2=z21, lam_u1=lu11, lam_u2=lu21, lam_v1=lv11, lam_v2=lv21, mu1=mu11, mu2=mu21)
        return o0, o1

    def algebraic_rates(self, t) -> tuple[np.ndarray, np.ndarray]:
        """d/dt of the order-0 terms z2 and mu2 at times t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        o0, _ = self.evaluate(t, order=0)
        y0 = self.slow0(t)
        out = [_algebraic_rates(self.tg, ti, y0[i], o0["z2"][i], o0["mu2"][i]) for i, ti in enumerate(t)]
        return np.array([a for a, _ in out]), np.array([b for _, b in out])

    def dae_residual(self, t) -> float:
        """Max residual of the algebraic rows (lam_u2 and lam_v2 equations) at both orders."""
        o0, o1 = self.evaluate(t)
        t = np.atleast_1d(t)
        worst = 0.0
        for i, ti in enumerate(t):
            f = self.tg.frame(ti)
            for o in (o0, o1) if o1 is not None else (o0,):
                r1 = -f.D_u2.T @ o["z1"][i] - f.D_u3 @ o["z2"][i] - f.A2.T @ o["lam_u1"][i] + f.D_v2 @ o["mu2"][i]
                r2 = -f.D_v2 @ o["z2"][i] - f.A2.T @ o["lam_v1"][i]
                worst = max(worst, float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
        return worst


def solve_outer_zero(tg: TransformedGame, nodes: int | None = None) -> OuterSolution:
    """Order-0 outer terms."""
    if tg.k == 0:
        raise UnsupportedConfigurationError("the expansion needs at least one slow state (s < n)")
    k = tg.k
    sol = _solve_reduced(tg, tg.z0[:k], np.zeros(k), nodes, "order-0 reduced problem")
    return OuterSolution(tg, sol)


# ---------------------------------------------------------------------------
# boundary layers


def _layer_frame(tg: TransformedGame, t: float):
    f = tg.frame(t)
    S, Sinv = sqrt_spd(f.D_v2)
    return f, S, Sinv


@dataclass
class LeftLayerBuild:
    builder: _GeneratorBuilder
    C: dict
    S: np.ndarray
    Sinv: np.ndarray


def left_layer_zero(tg: TransformedGame, outer0: OuterSolution) -> LeftLayerBuild:
    """Order-0 fast corrections at t = 0 (z2, lam_v2, lam_u2, mu2)."""
    f, S, Sinv = _layer_frame(tg, 0.0)
    o0, _ = outer0.evaluate([0.0], order=0)
    delta = tg.z0[tg.k:] - o0["z2"][0]
    b = _GeneratorBuilder()
    blk = _theta_block(b, S, Sinv, f.D_u3, {}, "left", delta, -o0["mu2"][0])
    C = {"z2_0": blk["z"], "lam_v2_0": blk["lv"], "lam_u2_0": blk["lu"], "mu2_0": blk["mu"],
         "eta_0": blk["eta"], "zeta_0": blk["zeta"]}
    return LeftLayerBuild(b, C, S, Sinv)


def left_layer_first_slow(tg: TransformedGame, build: LeftLayerBuild) -> LeftLayerBuild:
    """Order-1 slow corrections at t = 0: z1, lam_u1, mu1 (lam_v1 is identically zero)."""
    f = tg.frame(0.0)
    b, C = build.builder, build.C
    C["z1_1"] = -f.A2 @ b.tail(C["z2_0"])
    C["lam_u1_1"] = f.D_u2 @ b.tail(C["z2_0"])
    C["mu1_1"] = -f.A2 @ b.tail(C["mu2_0"])
    C["lam_v1_1"] = b.zeros(tg.k)
    return build


def solve_outer_first(tg: TransformedGame, outer0: OuterSolution, build: LeftLayerBuild,
                      nodes: int | None = None) -> OuterSolution:
    """Order-1 outer terms, started from the slow left corrections at t = 0."""
    b, C = build.builder, build.C
    z11_0 = -b.value0(C["z1_1"])
    mu11_0 = -b.value0(C["mu1_1"])
    sol1 = _solve_reduced(tg, z11_0, mu11_0, nodes or outer0.slow0.nodes.size, "order-1 reduced problem")
    return OuterSolution(tg, outer0.slow0, sol1)


def left_layer_first_fast(tg: TransformedGame, outer: OuterSolution, build: LeftLayerBuild) -> LeftLayerBuild:
    """Order-1 fast corrections at t = 0."""
    f = tg.frame(0.0)
    b, C, S, Sinv = build.builder, build.C, build.S, build.Sinv
    _, o1 = outer.evaluate([0.0])
    b.add_xi_copies()
    xz = b.xi_times(C["z2_0"])
    xmu = b.xi_times(C["mu2_0"])
    for key in list(C):
        C[key] = b.fit(C[key])
    forcing = {
        "z": f.A4 @ C["z2_0"],
        "lv": -f.dD_v2 @ xz - f.A4.T @ C["lam_v2_0"],
        "mu": f.A4 @ C["mu2_0"],
        "lu": (-f.D_u2.T @ C["z1_1"] - f.dD_u3 @ xz - f.A2.T @ C["lam_u1_1"]
               - f.A4.T @ C["lam_u2_0"] + f.dD_v2 @ xmu),
    }
    blk = _theta_block(b, S, Sinv, f.D_u3, forcing, "left", -o1["z2"][0], -o1["mu2"][0])
    C.update({"z2_1": blk["z"], "lam_v2_1": blk["lv"], "lam_u2_1": blk["lu"], "mu2_1": blk["mu"],
              "x_1": blk["x"], "y_1": blk["y"], "eta_1": blk["eta"], "zeta_1": blk["zeta"],
              "f_x": blk["f_x"], "f_y": blk["f_y"], "f_eta": blk["f_eta"], "f_zeta": blk["f_zeta"]})
    return build


def _freeze(b: _GeneratorBuilder, C: dict, side: str) -> LayerBank:
    return LayerBank(b.H.copy(), b.w0.copy(), {k: np.array(v) for k, v in C.items()}, side)


def right_layer_first_fast(tg: TransformedGame, outer: OuterSolution) -> LayerBank:
    """Order-1 fast corrections at t = tf (the order-0 ones vanish)."""
    f, S, Sinv = _layer_frame(tg, tg.tf)
    _, o1 = outer.evaluate([tg.tf])
    b = _GeneratorBuilder()
    blk = _theta_block(b, S, Sinv, f.D_u3, {}, "right", -o1["lam_v2"][0], -o1["lam_u2"][0])
    C = {"z2_1": blk["z"], "lam_v2_1": blk["lv"], "lam_u2_1": blk["lu"], "mu2_1": blk["mu"],
         "x_1": blk["x"], "y_1": blk["y"], "eta_1": blk["eta"], "zeta_1": blk["zeta"]}
    return _freeze(b, C, "right")


# ---------------------------------------------------------------------------
# composed expansion


@dataclass
class Expansion1:
    """All terms of the first-order expansion; eps-free, evaluated at any (t, eps)."""

    tg: TransformedGame
    outer: OuterSolution
    left: LayerBank
    right: LayerBank
    order: int = 1

    @property
    def beta0(self) -> float:
        return float(np.min(np.linalg.eigvalsh(sqrt_spd(self.tg.frame(0.0).D_v2)[0])))

    @property
    def beta_f(self) -> float:
        return float(np.min(np.linalg.eigvalsh(sqrt_spd(self.tg.frame(self.tg.tf).D_v2)[0])))

    def _times(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tf = self.tg.tf
        if np.any(t < -1e-12 * tf) or np.any(t > tf * (1 + 1e-12)):
            raise ValueError("evaluation time outside [0, tf]")
        return np.clip(t, 0.0, tf)

    def compose(self, t, eps: float, order: int | None = None) -> dict:
        """The eight scaled components (keys as in the exact solver) at times t."""
        order = self.order if order is None else order
        if order not in (0, 1):
            raise ValueError("order must be 0 or 1")
        if order > self.order:
            raise ValueError(f"expansion was built to order {self.order}")
        if eps < 0:
            raise ValueError("eps must be non-negative")
        t = self._times(t)
        o0, o1 = self.outer.evaluate(t, order)
        out = {k: o0[k].copy() for k in COMPONENTS}
        if eps == 0:
            return out
        L = self.left.evaluate(t / eps)
        for k in ("z2", "lam_u2", "lam_v2", "mu2"):
            out[k] += L[k + "_0"]
        if order == 0:
            return out
        R = self.right.evaluate((t - self.tg.tf) / eps)
        for k in COMPONENTS:
            term = o1[k].copy()
            if k + "_1" in L:
                term += L[k + "_1"]
            if k + "_1" in R:
                term += R[k + "_1"]
            out[k] += eps * term
        return out

    def stacked(self, t, eps: float, order: int | None = None) -> np.ndarray:
        c = self.compose(t, eps, order)
        return np.hstack([c[k] for k in COMPONENTS])

    # -- dump / load -------------------------------------------------------

    def to_dict(self) -> dict:
        g = self.tg.game
        d = {
            "format": "cheapstack-expansion-1",
            "order": self.order,
            "game": g.to_dict(),
            "complement": self.tg.reduction.B_c.to_json(),
            "beta0": self.beta0,
            "beta_f": self.beta_f,
            "outer": {"nodes": self.outer.slow0.nodes.tolist(),
                      "order0": self.outer.slow0.values.tolist(),
                      "order1": None if self.outer.slow1 is None else self.outer.slow1.values.tolist()},
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }
        return d

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "Expansion1":
        if d.get("format") != "cheapstack-expansion-1":
            raise ValueError("not an expansion dump")
        g = GameSpec.from_dict(d["game"])
        tg = transform_game(g, build_reduction(g, MatrixFunction.from_json(d["complement"])))
        nodes = np.asarray(d["outer"]["nodes"], dtype=float)
        k = tg.k

        def rebuild(values, z1_0, mu1_0):
            lbvp = LinearBvp(lambda t: reduced_matrix(tg, t), 4 * k, tg.tf,
                             np.r_[np.arange(k), np.arange(3 * k, 4 * k)], np.r_[z1_0, mu1_0],
                             np.arange(k, 3 * k), np.zeros(2 * k), tg.is_constant)
            return LinearSolution(lbvp, nodes, np.asarray(values, dtype=float).reshape(nodes.size, 4 * k))

        v0 = np.asarray(d["outer"]["order0"], dtype=float).reshape(nodes.size, 4 * k)
        slow0 = rebuild(v0, v0[0, :k], v0[0, 3 * k:])
        slow1 = None
        if d["outer"]["order1"] is not None:
            v1 = np.asarray(d["outer"]["order1"], dtype=float).reshape(nodes.size, 4 * k)
            slow1 = rebuild(v1, v1[0, :k], v1[0, 3 * k:])
        return cls(tg, OuterSolution(tg, slow0, slow1), LayerBank.from_dict(d["left"]),
                   LayerBank.from_dict(d["right"]), int(d["order"]))

    @classmethod
    def load(cls, path: str | Path) -> "Expansion1":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_expansion(g_or_tg, order: int = 1, nodes: int | None = None) -> Expansion1:
    """Run the whole construction pipeline."""
    tg = g_or_tg if isinstance(g_or_tg, TransformedGame) else transform_game(g_or_tg)
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    outer0 = solve_outer_zero(tg, nodes)
    build = left_layer_zero(tg, outer0)
    if order == 0:
        left = _freeze(build.builder, build.C, "left")
        right = LayerBank(np.zeros((0, 0)), np.zeros(0), {}, "right")
        return Expansion1(tg, outer0, left, right, 0)
    left_layer_first_slow(tg, build)
    outer = solve_outer_first(tg, outer0, build, nodes)
    left_layer_first_fast(tg, outer, build)
    left = _freeze(build.builder, build.C, "left")
    right = right_layer_first_fast(tg, outer)
    return Expansion1(tg, outer, left, right, 1)


def compose_first_order(expansion: Expansion1, t, eps: float, order: int = 1) -> dict:
    return expansion.compose(t, eps, order)


# ---------------------------------------------------------------------------
# suboptimal controls and eps-free costs


def _B_blocks(tg: TransformedGame, t: np.ndarray):
    for ti in t:
        f = tg.frame(ti)
        yield f.B_u1, f.B_u2


def hat_controls(expansion: Expansion1, t, eps: float, order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Controls built from the composed costates (same formulas as the optimal ones)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    t = expansion._times(t)
    c = expansion.compose(t, eps, order)
    u = np.empty((t.size, expansion.tg.r))
    for i, (B1, B2) in enumerate(_B_blocks(expansion.tg, t)):
        u[i] = -B1.T @ c["lam_u1"][i] - eps * B2.T @ c["lam_u2"][i]
    return u, -c["lam_v2"] / eps


def tilde_u(expansion: Expansion1, t) -> np.ndarray:
    """Leader control from the order-0 outer costate only; independent of eps."""
    t = expansion._times(t)
    o0, _ = expansion.outer.evaluate(t, order=0)
    u = np.empty((t.size, expansion.tg.r))
    for i, (B1, _) in enumerate(_B_blocks(expansion.tg, t)):
        u[i] = -B1.T @ o0["lam_u1"][i]
    return u


def tilde_controls(expansion: Expansion1, t, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Simplified suboptimal pair: eps-free leader control, layer-plus-outer follower control."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if expansion.order < 1:
        raise ValueError("the simplified follower control needs the order-1 outer term")
    t = expansion._times(t)
    _, o1 = expansion.outer.evaluate(t)
    v = -expansion.left("lam_v2_0", t / eps) / eps - o1["lam_v2"]
    return tilde_u(expansion, t), v


def eps_free_costs(expansion_or_outer, quad_order: int = QUAD_ORDER) -> tuple[float, float]:
    """Limits of both optimal costs as eps -> 0, from the order-0 outer terms."""
    outer = expansion_or_outer.outer if isinstance(expansion_or_outer, Expansion1) else expansion_or_outer
    tg = outer.tg
    c, w = gauss_legendre(quad_order)
    nodes = outer.slow0.nodes
    h = np.diff(nodes)
    t = (nodes[:-1, None] + h[:, None] * c[None, :]).ravel()
    wt = (h[:, None] * w[None, :]).ravel()
    o0, _ = outer.evaluate(t, order=0)
    ju = np.empty(t.size)
    jv = np.empty(t.size)
    for i, ti in enumerate(t):
        f = tg.frame(ti)
        z = np.r_[o0["z1"][i], o0["z2"][i]]
        lu = o0["lam_u1"][i]
        ju[i] = z @ f.D_u @ z + lu @ f.S_u1 @ lu
        jv[i] = z @ f.D_v @ z + lu @ f.B_u1 @ f.G_vu @ f.B_u1.T @ lu
    return 0.5 * float(wt @ ju), 0.5 * float(wt @ jv)


# ---------------------------------------------------------------------------
# reduced optimal control problem, solved from its own Pontryagin system


@dataclass
class ReducedOcpResult:
    t: np.ndarray
    u: np.ndarray
    cost: float
    state_form_min: float  # smallest value of the state quadratic form along the solution


def _reduced_hamiltonian_matrix(tg: TransformedGame, t: float) -> np.ndarray:
    """Pontryagin system of the reduced problem in (z1, lam_v1, p1, p2).

    Dynamics  z1' = A1 z1 - A2 D_v2^{-1} A2' lam_v1 + B_u1 u,  lam_v1' = -D_v1 z1 - A1' lam_v1;
    running cost 0.5 [ (z1, -W lam_v1)' D_u (z1, -W lam_v1) + u'u ], W = D_v2^{-1} A2'.
    """
    f = tg.frame(t)
    k = tg.k
    W = np.linalg.solve(f.D_v2, f.A2.T)
    E = np.vstack([np.hstack([np.eye(k), np.zeros((k, k))]), np.hstack([np.zeros((f.D_u3.shape[0], k)), -W])])
    Q = E.T @ f.D_u @ E  # state weight on (z1, lam_v1)
    F = np.block([[f.A1, -f.A2 @ W], [-f.D_v1, -f.A1.T]])
    G = np.vstack([f.B_u1, np.zeros((k, f.B_u1.shape[1]))])
    return np.block([[F, -G @ G.T], [-Q, -F.T]])


def reduced_ocp_check(tg: TransformedGame, nodes: int = 61, quad_order: int = QUAD_ORDER) -> ReducedOcpResult:
    """Solve the reduced leader problem independently; return its optimal control and cost."""
    k = tg.k
    lbvp = LinearBvp(
        matrix=lambda t: _reduced_hamiltonian_matrix(tg, t), dim=4 * k, tf=tg.tf,
        # z1(0) given, lam_v1(tf) = 0, costate p1(tf) = 0 (free z1(tf)), p2(0) = 0 (free lam_v1(0))
        left_index=np.r_[np.arange(k), np.arange(3 * k, 4 * k)], left_value=np.r_[tg.z0[:k], np.zeros(k)],
        right_index=np.arange(k, 3 * k), right_value=np.zeros(2 * k), constant=tg.is_constant,
    )
    sol = solve_linear_bvp(lbvp, np.linspace(0.0, tg.tf, nodes))
    c, w = gauss_legendre(quad_order)
    h = np.diff(sol.nodes)
    t = (sol.nodes[:-1, None] + h[:, None] * c[None, :]).ravel()
    wt = (h[:, None] * w[None, :]).ravel()
    y = sol(t)
    u = np.empty((t.size, tg.r))
    vals = np.empty(t.size)
    form = np.empty(t.size)
    for i, ti in enumerate(t):
        f = tg.frame(ti)
        z1, lv1, p1 = y[i, :k], y[i, k:2 * k], y[i, 2 * k:3 * k]
        u[i] = -f.B_u1.T @ p1
        zz = np.r_[z1, -np.linalg.solve(f.D_v2, f.A2.T @ lv1)]
        form[i] = zz @ f.D_u @ zz
        vals[i] = form[i] + u[i] @ u[i]
    return ReducedOcpResult(t, u, 0.5 * float(wt @ vals), float(form.min()))
