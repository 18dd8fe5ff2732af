"""Random well-posed games shared by the test modules."""

from __future__ import annotations

import numpy as np

from cheapstack.model import GameSpec, MatrixFunction


def _spd(rng, n, lo=0.5):
    M = rng.normal(size=(n, n))
    return M @ M.T / n + lo * np.eye(n)


def random_game(seed: int, n: int = 3, r: int = 2, s: int = 1, degree: int = 1, tf: float = 1.5,
                G_uv: bool = False, G_vu: bool = True) -> GameSpec:
    """Game with polynomial coefficients of the given degree and PD/PSD weights."""
    rng = np.random.default_rng(seed)

    def poly(rows, cols, scale=0.5):
        return MatrixFunction([rng.normal(scale=scale / (k + 1), size=(rows, cols)) for k in range(degree + 1)])

    def psd_poly(m, lo):
        # (P0 + t P1)(P0 + t P1)' + lo I stays PSD for all t
        P = [rng.normal(scale=0.6 / (k + 1), size=(m, m)) for k in range(degree + 1)]
        F = MatrixFunction(P)
        return F @ F.T + MatrixFunction.constant(lo * np.eye(m))

    A = poly(n, n)
    B_u = poly(n, r)
    B_v = MatrixFunction.constant(rng.normal(size=(n, s))) + poly(n, s, 0.1)
    D_u = psd_poly(n, 0.1)
    D_v = psd_poly(n, 0.3)
    Guv = psd_poly(s, 0.0) if G_uv else MatrixFunction.zeros(s, s)
    Gvu = psd_poly(r, 0.0) if G_vu else MatrixFunction.zeros(r, r)
    Z0 = rng.normal(size=n)
    return GameSpec(n=n, r=r, s=s, tf=tf, A_cal=A, B_u_cal=B_u, B_v_cal=B_v, D_u_cal=D_u, D_v_cal=D_v,
                    G_uv=Guv, G_vu=Gvu, Z0=Z0, name=f"random-{seed}")
