"""Linear two-point boundary-value problems by global multiple shooting.

A problem y' = M(t) y on [0, tf] with some components fixed at t = 0 and the
rest at t = tf is discretised on a mesh t_0 < ... < t_N. Transfer matrices
Phi_k over each interval are computed exactly (matrix exponential) when M is
constant and by an 8th-order Runge-Kutta integration otherwise. The node
values are then found from one sparse linear system

    y_{k+1} - Phi_k y_k = 0,   boundary rows,

which keeps every interval short relative to the fastest mode, so both the
growing and the decaying fundamental solutions stay well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, UnsolvableProblemError

IVP_RTOL = 1e-12
IVP_ATOL = 1e-13
MIN_STENCIL = 1e-3


@dataclass(frozen=True)
class LinearBvp:
    """y' = matrix(t) y with component-wise boundary values."""

    matrix: Callable[[float], np.ndarray]
    dim: int
    tf: float
    left_index: np.ndarray
    left_value: np.ndarray
    right_index: np.ndarray
    right_value: np.ndarray
    constant: bool = False

    def __post_init__(self):
        li = np.asarray(self.left_index, dtype=int)
        ri = np.asarray(self.right_index, dtype=int)
        if li.size + ri.size != self.dim:
            raise ValueError("number of boundary conditions must equal the dimension")
        object.__setattr__(self, "left_index", li)
        object.__setattr__(self, "right_index", ri)
        object.__setattr__(self, "left_value", np.asarray(self.left_value, dtype=float).reshape(li.size))
        object.__setattr__(self, "right_value", np.asarray(self.right_value, dtype=float).reshape(ri.size))


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def zone_nodes(a: float, b: float, h: float) -> np.ndarray:
    m = max(1, int(np.ceil((b - a) / h - 1e-9)))
    return np.linspace(a, b, m + 1)


def three_zone_mesh(tf: float, h_layer: float, h_interior: float, width: float) -> np.ndarray:
    """Fine spacing on [0, width] and [tf - width, tf], coarser in between."""
    h_layer = min(h_layer, h_interior)
    width = min(max(width, 0.0), 0.5 * tf)
    if width <= 0.0 or width >= 0.5 * tf - 1e-15 * tf:
        return zone_nodes(0.0, tf, h_layer)
    left = zone_nodes(0.0, width, h_layer)
    mid = zone_nodes(width, tf - width, h_interior)
    right = zone_nodes(tf - width, tf, h_layer)
    return np.concatenate([left, mid[1:], right[1:]])


class LinearSolution:
    """Node values of a solved LinearBvp with exact dense evaluation."""

    def __init__(self, bvp: LinearBvp, nodes: np.ndarray, values: np.ndarray):
        self.bvp = bvp
        self.nodes = nodes
        self.values = values
        self._M0 = bvp.matrix(0.0) if bvp.constant else None

    @property
    def dim(self) -> int:
        return self.bvp.dim

    def _locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nodes = self.nodes
        k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
        return k, t - nodes[k]

    def propagate(self, k: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Values at nodes[k] + delta, propagated from node k."""
        k = np.asarray(k, dtype=int)
        delta = np.asarray(delta, dtype=float)
        out = np.empty((k.size, self.dim))
        if self.bvp.constant:
            _, first, inv = np.unique(delta, return_index=True, return_inverse=True)
            E = sla.expm(self._M0[None] * delta[first][:, None, None])
            out[:] = np.einsum("kij,kj->ki", E[inv], self.values[k])
            return out
        for kk in np.unique(k):
            sel = np.nonzero(k == kk)[0]
            t0 = self.nodes[kk]
            ts = t0 + delta[sel]
            order = np.argsort(ts)
            out[sel[order]] = _integrate_vector(self.bvp.matrix, t0, self.values[kk], ts[order])
        return out

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        if np.any(tt < -1e-12 * self.bvp.tf) or np.any(tt > self.bvp.tf * (1 + 1e-12)):
            raise ValueError("evaluation time outside [0, tf]")
        k, d = self._locate(tt)
        y = self.propagate(k, d)
        return y[0] if scalar else y

    def gauss_points(self, order: int = 8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes, weights and solution values."""
        c, w = gauss_legendre(order)
        h = np.diff(self.nodes)
        k = np.repeat(np.arange(h.size), order)
        delta = (h[:, None] * c[None, :]).ravel()
        t = self.nodes[k] + delta
        weights = (h[:, None] * w[None, :]).ravel()
        return t, weights, self.propagate(k, delta)

    def refined_points(self, per_interval: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Nodes plus ``per_interval - 1`` equispaced interior points per interval."""
        h = np.diff(self.nodes)
        frac = np.arange(per_interval) / per_interval
        k = np.repeat(np.arange(h.size), per_interval)
        delta = (h[:, None] * frac[None, :]).ravel()
        t = np.append(self.nodes[k] + delta, self.nodes[-1])
        y = np.vstack([self.propagate(k, delta), self.values[-1:]])
        return t, y

    def boundary_residual(self) -> float:
        b = self.bvp
        r1 = np.abs(self.values[0, b.left_index] - b.left_value)
        r2 = np.abs(self.values[-1, b.right_index] - b.right_value)
        return float(max(r1.max(initial=0.0), r2.max(initial=0.0)))

    def ode_residual(self, row_scale: np.ndarray | None = None, rate: float = 1.0,
                     points: str = "midpoints") -> float:
        """Max of row_scale * (y' - M y) with y' from a 6th-order difference stencil.

        The stencil only uses dense evaluation (propagation from the left node),
        so it checks the transfer maps independently of the linear solve.
        """
        h = np.diff(self.nodes)
        if points == "midpoints":
            k = np.arange(h.size)
            centre = 0.5 * h
        else:
            c, _ = gauss_legendre(4)
            k = np.repeat(np.arange(h.size), c.size)
            centre = (h[:, None] * c[None, :]).ravel()
        # the stencil may reach past the interval (propagation is exact both ways);
        # a floor on the step keeps rounding noise below the tolerances in use
        step = np.minimum(0.02 / max(rate, 1e-12), np.maximum(h[k] / 8.0, MIN_STENCIL / max(rate, 1.0)))
        coef = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
        offs = np.arange(-3, 4)
        kk = np.repeat(k, offs.size)
        dd = (centre[:, None] + offs[None, :] * step[:, None]).ravel()
        Y = self.propagate(kk, dd).reshape(k.size, offs.size, self.dim)
        dy = np.einsum("o,koi->ki", coef, Y) / step[:, None]
        y = Y[:, 3]
        t = self.nodes[k] + centre
        if self.bvp.constant:
            My = y @ self._M0.T
        else:
            My = np.stack([self.bvp.matrix(ti) @ yi for ti, yi in zip(t, y)])
        res = dy - My
        if row_scale is not None:
            res = res * row_scale[None, :]
        return float(np.max(np.abs(res)))


def _integrate_vector(matrix, t0, y0, ts):
    """Values at sorted times ts, integrating forward and/or backward from (t0, y0)."""
    out = np.empty((ts.size, y0.size))
    at_node = ts == t0
    out[at_node] = y0
    for sel in (ts > t0, ts < t0):
        target = ts[sel]
        if not target.size:
            continue
        if target[0] < t0:
            target = target[::-1]
        sol = solve_ivp(lambda t, y: matrix(t) @ y, (t0, target[-1]), y0, method="DOP853",
                        t_eval=target, rtol=IVP_RTOL, atol=IVP_ATOL)
        if not sol.success:
            raise ConvergenceError(f"integration failed: {sol.message}")
        out[sel] = sol.y.T if target[0] >= t0 else sol.y.T[::-1]
    return out


def transfer_matrices(bvp: LinearBvp, nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    d = bvp.dim
    if bvp.constant:
        M = bvp.matrix(0.0)
        keys, first, inv = np.unique(h, return_index=True, return_inverse=True)
        E = sla.expm(M[None] * h[first][:, None, None])
        return E[inv]
    out = np.empty((h.size, d, d))
    eye = np.eye(d).ravel()
    for i in range(h.size):
        f = lambda t, y: (bvp.matrix(t) @ y.reshape(d, d)).ravel()
        sol = solve_ivp(f, (nodes[i], nodes[i + 1]), eye, method="DOP853",
                        rtol=IVP_RTOL, atol=IVP_ATOL)
        if not sol.success:
            raise ConvergenceError(f"transfer-matrix integration failed: {sol.message}")
        out[i] = sol.y[:, -1].reshape(d, d)
    return out


def solve_linear_bvp(bvp: LinearBvp, nodes: np.ndarray) -> LinearSolution:
    """Solve on the given mesh; raise UnsolvableProblemError if singular."""
    nodes = np.asarray(nodes, dtype=float)
    N = nodes.size - 1
    d = bvp.dim
    Phi = transfer_matrices(bvp, nodes)
    if not np.all(np.isfinite(Phi)):
        raise ConvergenceError("transfer matrices overflowed; mesh too coarse for the fastest mode")

    rows, cols, vals = [], [], []
    # boundary rows
    nl = bvp.left_index.size
    rows.extend(range(nl))
    cols.extend(bvp.left_index.tolist())
    vals.extend([1.0] * nl)
    nr = bvp.right_index.size
    rows.extend(range(nl, d))
    cols.extend((N * d + bvp.right_index).tolist())
    vals.extend([1.0] * nr)
    # continuity rows, block k: y_{k+1} - Phi_k y_k
    ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    for k in range(N):
        r0 = d + k * d
        rows.extend((r0 + ii).ravel().tolist())
        cols.extend((k * d + jj).ravel().tolist())
        vals.extend((-Phi[k]).ravel().tolist())
        rows.extend(range(r0, r0 + d))
        cols.extend(range((k + 1) * d, (k + 2) * d))
        vals.extend([1.0] * d)
    size = (N + 1) * d
    Amat = sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
    rhs = np.zeros(size)
    rhs[:nl] = bvp.left_value
    rhs[nl:d] = bvp.right_value
    try:
        lu = spla.splu(Amat)
    except RuntimeError as exc:
        raise UnsolvableProblemError(f"shooting matrix is singular: {exc}") from None
    y = lu.solve(rhs)
    # one step of iterative refinement
    y = y + lu.solve(rhs - Amat @ y)
    if not np.all(np.isfinite(y)):
        raise UnsolvableProblemError("shooting system produced non-finite values (singular problem)")
    resid = np.max(np.abs(Amat @ y - rhs)) / (1.0 + np.max(np.abs(y)))
    if resid > 1e-8:
        raise UnsolvableProblemError(f"shooting system is numerically singular (residual {resid:.2e})")
    return LinearSolution(bvp, nodes, y.reshape(N + 1, d))
