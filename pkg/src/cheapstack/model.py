"""Game data, standing assumptions and the reducing state transformation.

The original game is

    dZ/dt = Acal Z + Bcal_u u + Bcal_v v,   Z(0) = Z0,
    J_u = 1/2 int Z'Dcal_u Z + w_u u'u + w_v v'G_uv v,
    J_v = 1/2 int Z'Dcal_v Z + w_v v'v + u'G_vu u,

with all coefficients polynomial in t. The change of variables Z = R_v z,
R_v = (L_v, Bcal_v), turns the follower's input matrix into (0; I_s) and makes
the follower's state weight block diagonal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import AssumptionError, InvalidComplementError, StructuralError

PSD_RTOL = 1e-10
FRAME_CACHE = 20000


# ---------------------------------------------------------------------------
# polynomial matrix functions


class MatrixFunction:
    """Matrix whose entries are polynomials in t.

    ``coeffs[k]`` is the matrix multiplying t**k, so ``coeffs`` has shape
    (degree + 1, rows, cols).
    """

    __slots__ = ("coeffs", "_jets")

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[0] == 0:
            raise StructuralError(f"polynomial coefficients must be 3-d, got shape {c.shape}")
        # trim trailing zero powers so that degree and constancy are meaningful
        k = c.shape[0]
        while k > 1 and not np.any(c[k - 1]):
            k -= 1
        c = c[:k]
        c.setflags(write=False)
        self.coeffs = c
        self._jets = [c]

    @classmethod
    def constant(cls, m) -> "MatrixFunction":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return cls(m[None])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatrixFunction":
        return cls(np.zeros((1, rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "MatrixFunction":
        return cls(np.eye(n)[None])

    @classmethod
    def from_entries(cls, entries) -> "MatrixFunction":
        """Build from a nested list whose entries are ascending coefficient lists."""
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        deg = 0
        for row in entries:
            if len(row) != cols:
                raise StructuralError("ragged polynomial matrix")
            for e in row:
                deg = max(deg, len(np.atleast_1d(e)) - 1)
        c = np.zeros((deg + 1, rows, cols))
        for i, row in enumerate(entries):
            for j, e in enumerate(row):
                e = np.atleast_1d(np.asarray(e, dtype=float))
                c[: len(e), i, j] = e
        return cls(c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def is_constant(self) -> bool:
        return self.coeffs.shape[0] == 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + self.shape)
        for c in self.coeffs[::-1]:
            out = out * t[..., None, None] + c
        return out

    def derivative(self, order: int = 1) -> "MatrixFunction":
        c = self.coeffs
        for _ in range(order):
            if c.shape[0] == 1:
                return MatrixFunction.zeros(*self.shape)
            k = np.arange(1, c.shape[0], dtype=float)
            c = c[1:] * k[:, None, None]
        return MatrixFunction(c)

    def jet(self, t: float, order: int = 2) -> list[np.ndarray]:
        """Value and derivatives up to ``order`` at a scalar t."""
        while len(self._jets) <= order:
            c = self._jets[-1]
            if c.shape[0] == 1:
                c = np.zeros_like(c)
            else:
                c = c[1:] * np.arange(1, c.shape[0], dtype=float)[:, None, None]
            self._jets.append(c)
        t = float(t)
        out = []
        for c in self._jets[: order + 1]:
            v = c[-1].copy()
            for a in c[-2::-1]:
                v *= t
                v += a
            out.append(v)
        return out

    @property
    def T(self) -> "MatrixFunction":
        return MatrixFunction(np.swapaxes(self.coeffs, 1, 2))

    def __matmul__(self, other: "MatrixFunction") -> "MatrixFunction":
        if self.cols != other.rows:
            raise StructuralError(f"cannot multiply {self.shape} by {other.shape}")
        p, q = self.coeffs.shape[0], other.coeffs.shape[0]
        c = np.zeros((p + q - 1, self.rows, other.cols))
        for i in range(p):
            for j in range(q):
                c[i + j] += self.coeffs[i] @ other.coeffs[j]
        return MatrixFunction(c)

    def _binary(self, other, sign: float) -> "MatrixFunction":
        if not isinstance(other, MatrixFunction):
            other = MatrixFunction.constant(other)
        if self.shape != other.shape:
            raise StructuralError(f"shape mismatch {self.shape} vs {other.shape}")
        k = max(self.coeffs.shape[0], other.coeffs.shape[0])
        c = np.zeros((k,) + self.shape)
        c[: self.coeffs.shape[0]] += self.coeffs
        c[: other.coeffs.shape[0]] += sign * other.coeffs
        return MatrixFunction(c)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __neg__(self):
        return MatrixFunction(-self.coeffs)

    def __mul__(self, scalar: float):
        return MatrixFunction(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __getitem__(self, idx) -> "MatrixFunction":
        rows, cols = idx
        return MatrixFunction(self.coeffs[:, rows, cols])

    def hstack(self, other: "MatrixFunction") -> "MatrixFunction":
        k = max(self.coeffs.shape[0], other.coeffs.shape[0])
        a = np.zeros((k,) + self.shape)
        b = np.zeros((k,) + other.shape)
        a[: self.coeffs.shape[0]] = self.coeffs
        b[: other.coeffs.shape[0]] = other.coeffs
        return MatrixFunction(np.concatenate([a, b], axis=2))

    def to_json(self):
        if self.is_constant:
            return self.coeffs[0].tolist()
        return {"poly": np.moveaxis(self.coeffs, 0, -1).tolist()}

    @classmethod
    def from_json(cls, obj) -> "MatrixFunction":
        if isinstance(obj, dict):
            if "poly" not in obj:
                raise StructuralError("matrix object must have a 'poly' key")
            return cls.from_entries(obj["poly"])
        arr = np.asarray(obj, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise StructuralError(f"constant matrix must be 2-d, got {arr.ndim}-d")
        return cls.constant(arr)

    def __repr__(self) -> str:
        return f"MatrixFunction(shape={self.shape}, degree={self.degree})"


class PointwiseMatrixFunction:
    """Matrix function known through exact pointwise values and derivatives.

    Used for the rational functions produced by the reduction; ``jet_fn(t)``
    returns [F(t), F'(t), F''(t)].
    """

    def __init__(self, shape: tuple[int, int], jet_fn: Callable[[float], list], constant: bool):
        self.shape = shape
        self._jet = jet_fn
        self.is_constant = constant

    def jet(self, t: float, order: int = 2) -> list[np.ndarray]:
        return self._jet(float(t))[: order + 1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self._jet(float(t))[0]
        return np.stack([self._jet(float(x))[0] for x in t.ravel()]).reshape(t.shape + self.shape)


# ---------------------------------------------------------------------------
# game specification


def _sym_err(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.T))) if m.size else 0.0


@dataclass(frozen=True)
class GameSpec:
    """Original game with polynomial coefficients."""

    n: int
    r: int
    s: int
    tf: float
    A_cal: MatrixFunction
    B_u_cal: MatrixFunction
    B_v_cal: MatrixFunction
    D_u_cal: MatrixFunction
    D_v_cal: MatrixFunction
    G_uv: MatrixFunction
    G_vu: MatrixFunction
    Z0: np.ndarray
    weight_u: float = 1.0
    weight_v: float = 1.0
    complement: MatrixFunction | None = None
    name: str = "game"

    def __post_init__(self):
        object.__setattr__(self, "Z0", np.asarray(self.Z0, dtype=float).reshape(-1))
        n, r, s = self.n, self.r, self.s
        if not (1 <= r <= n and 1 <= s < n):
            raise StructuralError(f"need 1 <= r <= n and 1 <= s < n, got n={n}, r={r}, s={s}")
        if not self.tf > 0:
            raise StructuralError("horizon tf must be positive")
        expect = {
            "A_cal": (n, n), "B_u_cal": (n, r), "B_v_cal": (n, s), "D_u_cal": (n, n),
            "D_v_cal": (n, n), "G_uv": (s, s), "G_vu": (r, r),
        }
        for key, shp in expect.items():
            got = getattr(self, key).shape
            if tuple(got) != shp:
                raise StructuralError(f"{key} has shape {got}, expected {shp}")
        if self.complement is not None and tuple(self.complement.shape) != (n, n - s):
            raise StructuralError(f"complement has shape {self.complement.shape}, expected {(n, n - s)}")
        if self.Z0.shape != (n,):
            raise StructuralError(f"Z0 has length {self.Z0.size}, expected {n}")
        if not (self.weight_u > 0 and self.weight_v > 0):
            raise StructuralError("control weights must be positive")
        if not np.all(np.isfinite(self.Z0)):
            raise StructuralError("Z0 must be finite")

    @property
    def is_constant(self) -> bool:
        mats = (self.A_cal, self.B_u_cal, self.B_v_cal, self.D_u_cal, self.D_v_cal, self.G_uv, self.G_vu)
        ok = all(m.is_constant for m in mats)
        return ok and (self.complement is None or self.complement.is_constant)

    def with_weights(self, weight_u: float, weight_v: float) -> "GameSpec":
        return replace(self, weight_u=float(weight_u), weight_v=float(weight_v))

    def with_Z0(self, Z0) -> "GameSpec":
        return replace(self, Z0=np.asarray(Z0, dtype=float))

    def with_complement(self, B_c: MatrixFunction | None) -> "GameSpec":
        return replace(self, complement=B_c)

    def to_dict(self) -> dict:
        d = {
            "name": self.name, "n": self.n, "r": self.r, "s": self.s, "tf": self.tf,
            "Z0": self.Z0.tolist(), "weight_u": self.weight_u, "weight_v": self.weight_v,
            "A": self.A_cal.to_json(), "B_u": self.B_u_cal.to_json(), "B_v": self.B_v_cal.to_json(),
            "D_u": self.D_u_cal.to_json(), "D_v": self.D_v_cal.to_json(),
            "G_uv": self.G_uv.to_json(), "G_vu": self.G_vu.to_json(),
        }
        if self.complement is not None:
            d["complement"] = self.complement.to_json()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GameSpec":
        try:
            n, r, s = int(d["n"]), int(d["r"]), int(d["s"])
            mats = {k: MatrixFunction.from_json(d[k]) for k in ("A", "B_u", "B_v", "D_u", "D_v")}
            tf = float(d["tf"])
            Z0 = d["Z0"]
        except KeyError as exc:
            raise StructuralError(f"game spec is missing field {exc}") from None
        G_uv = MatrixFunction.from_json(d["G_uv"]) if "G_uv" in d else MatrixFunction.zeros(s, s)
        G_vu = MatrixFunction.from_json(d["G_vu"]) if "G_vu" in d else MatrixFunction.zeros(r, r)
        comp = MatrixFunction.from_json(d["complement"]) if d.get("complement") is not None else None
        return cls(
            n=n, r=r, s=s, tf=tf, A_cal=mats["A"], B_u_cal=mats["B_u"], B_v_cal=mats["B_v"],
            D_u_cal=mats["D_u"], D_v_cal=mats["D_v"], G_uv=G_uv, G_vu=G_vu, Z0=Z0,
            weight_u=float(d.get("weight_u", 1.0)), weight_v=float(d.get("weight_v", 1.0)),
            complement=comp, name=str(d.get("name", "game")),
        )


def load_game(path: str | Path) -> GameSpec:
    """Read a game spec from a JSON or YAML document."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise StructuralError("game spec must be a mapping")
    return GameSpec.from_dict(data)


def save_game(g: GameSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# assumptions


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    worst_t: float | None
    value: float | None
    message: str


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def raise_if_failed(self) -> None:
        for c in self.checks:
            if not c.passed:
                raise AssumptionError(c.name, c.worst_t if c.worst_t is not None else float("nan"),
                                      c.value if c.value is not None else float("nan"), c.message)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            where = "" if c.worst_t is None else f" (worst t={c.worst_t:.4g}, value={c.value:.4e})"
            out.append(f"{c.name}: {'pass' if c.passed else 'FAIL'} - {c.message}{where}")
        return out


def min_eig_margin(m: np.ndarray) -> tuple[float, float]:
    """Smallest eigenvalue of the symmetric part and the PSD/PD threshold scale."""
    if m.size == 0:
        return np.inf, 0.0
    sym = 0.5 * (m + m.T)
    return float(np.linalg.eigvalsh(sym)[0]), PSD_RTOL * (1.0 + float(np.max(np.abs(m))))


def is_psd(m: np.ndarray) -> bool:
    lam, tol = min_eig_margin(m)
    return lam >= -tol


def is_pd(m: np.ndarray) -> bool:
    lam, tol = min_eig_margin(m)
    return lam >= tol


def sample_times(tf: float, samples: int) -> np.ndarray:
    return np.linspace(0.0, tf, max(int(samples), 2))


def validate_assumptions(g: GameSpec, samples: int = 101) -> AssumptionReport:
    """Check the standing assumptions at equally spaced times."""
    ts = sample_times(g.tf, samples)
    checks = []

    def worst(name, vals, good, msg_ok, msg_bad):
        vals = np.asarray(vals)
        i = int(np.argmin(vals))
        ok = bool(np.all(good))
        bad = int(np.argmin(good)) if not ok else i
        checks.append(AssumptionCheck(name, ok, float(ts[bad]), float(vals[bad]), msg_ok if ok else msg_bad))

    sym = max(_sym_err(m(t)) for m in (g.D_u_cal, g.D_v_cal, g.G_uv, g.G_vu) for t in ts)
    scale = 1.0 + max(float(np.max(np.abs(m(ts)))) for m in (g.D_u_cal, g.D_v_cal, g.G_uv, g.G_vu))
    sym_ok = sym <= 1e-12 * scale
    checks.append(AssumptionCheck("symmetry", sym_ok, None, None,
                                  "weight matrices symmetric" if sym_ok else f"asymmetry {sym:.3e}"))

    Bv = g.B_v_cal(ts)
    sv = np.array([np.linalg.svd(b, compute_uv=False) for b in Bv])
    smin = sv[:, -1]
    good = smin > PSD_RTOL * (1.0 + sv[:, 0])
    worst("A1", smin, good, "B_v has full column rank", "B_v loses column rank")

    for name, mats in (("A2", (g.D_u_cal, g.D_v_cal)),):
        margins = []
        good = []
        for t in ts:
            lam_t = []
            ok_t = True
            for m in mats:
                lam, tol = min_eig_margin(m(t))
                lam_t.append(lam)
                ok_t &= lam >= -tol
            margins.append(min(lam_t))
            good.append(ok_t)
        worst(name, margins, good, "state weights positive semi-definite", "state weight not positive semi-definite")

    margins, good = [], []
    for t in ts:
        lam_t, ok_t = [], True
        for m in (g.G_uv, g.G_vu):
            lam, tol = min_eig_margin(m(t))
            lam_t.append(lam)
            ok_t &= lam >= -tol
        margins.append(min(lam_t))
        good.append(ok_t)
    if not (g.weight_u > 0 and g.weight_v > 0):
        good = [False] * len(ts)
    worst("A3", margins, good, "control weights positive, cross weights positive semi-definite",
          "cross control weight not positive semi-definite")

    K = g.B_v_cal.T @ g.D_v_cal @ g.B_v_cal
    margins, good = [], []
    for t in ts:
        lam, tol = min_eig_margin(K(t))
        margins.append(lam)
        good.append(lam >= tol)
    worst("A4", margins, good, "B_v' D_v B_v invertible", "B_v' D_v B_v singular")

    checks.append(AssumptionCheck("A5", True, None, None, "smoothness holds: coefficients are polynomials"))
    checks.append(AssumptionCheck("A6", True, None, None, "smoothness holds: coefficients are polynomials"))
    return AssumptionReport(tuple(checks))


# ---------------------------------------------------------------------------
# reduction


def auto_complement(g: GameSpec) -> MatrixFunction:
    """Orthonormal basis of the orthogonal complement of range B_v(0), held constant."""
    Bv0 = g.B_v_cal(0.0)
    Q, _, _ = sla.qr(Bv0, mode="full", pivoting=True)
    return MatrixFunction.constant(Q[:, g.s:])


@dataclass(frozen=True)
class Reduction:
    """L_v and R_v with exact pointwise derivatives up to second order."""

    game: GameSpec
    B_c: MatrixFunction

    @cached_property
    def _K(self) -> MatrixFunction:
        g = self.game
        return g.B_v_cal.T @ g.D_v_cal @ g.B_v_cal

    @cached_property
    def _P(self) -> MatrixFunction:
        g = self.game
        return g.B_v_cal.T @ g.D_v_cal @ self.B_c

    def L_jet(self, t: float) -> list[np.ndarray]:
        K, dK, ddK = self._K.jet(t)
        P, dP, ddP = self._P.jet(t)
        X = np.linalg.solve(K, P)
        dX = np.linalg.solve(K, dP - dK @ X)
        ddX = np.linalg.solve(K, ddP - 2.0 * dK @ dX - ddK @ X)
        B, dB, ddB = self.game.B_v_cal.jet(t)
        C, dC, ddC = self.B_c.jet(t)
        return [C - B @ X, dC - dB @ X - B @ dX, ddC - ddB @ X - 2.0 * dB @ dX - B @ ddX]

    def R_jet(self, t: float) -> list[np.ndarray]:
        L = self.L_jet(t)
        B = self.game.B_v_cal.jet(t)
        return [np.hstack([l, b]) for l, b in zip(L, B)]

    @property
    def is_constant(self) -> bool:
        return self.game.is_constant and self.B_c.is_constant

    @property
    def L_v(self) -> PointwiseMatrixFunction:
        g = self.game
        return PointwiseMatrixFunction((g.n, g.n - g.s), self.L_jet, self.is_constant)

    @property
    def R_v(self) -> PointwiseMatrixFunction:
        g = self.game
        return PointwiseMatrixFunction((g.n, g.n), self.R_jet, self.is_constant)


def build_reduction(g: GameSpec, B_c: MatrixFunction | None = None, samples: int = 101) -> Reduction:
    """Construct L_v, R_v for a complement B_c (the game's own, or automatic)."""
    if B_c is None:
        B_c = g.complement if g.complement is not None else auto_complement(g)
    if tuple(B_c.shape) != (g.n, g.n - g.s):
        raise StructuralError(f"complement has shape {B_c.shape}, expected {(g.n, g.n - g.s)}")
    red = Reduction(g, B_c)
    for t in sample_times(g.tf, samples):
        M = np.hstack([B_c(t), g.B_v_cal(t)])
        sv = np.linalg.svd(M, compute_uv=False)
        if not sv[-1] > 1e-10 * sv[0]:
            raise InvalidComplementError(f"(B_c, B_v) is singular at t={t:.6g} (smallest singular value {sv[-1]:.3e})")
        try:
            R = red.R_jet(t)[0]
        except np.linalg.LinAlgError:
            raise InvalidComplementError(f"B_v' D_v B_v is singular at t={t:.6g}") from None
        svR = np.linalg.svd(R, compute_uv=False)
        if not svR[-1] > 1e-10 * svR[0]:
            raise InvalidComplementError(f"R_v is singular at t={t:.6g}")
    return red


# ---------------------------------------------------------------------------
# transformed game


@dataclass(frozen=True)
class Frame:
    """All transformed coefficients (and needed derivatives) at one time."""

    t: float
    k: int  # slow dimension n - s
    A: np.ndarray
    dA: np.ndarray
    B_u: np.ndarray
    D_u: np.ndarray
    dD_u: np.ndarray
    D_v1: np.ndarray
    D_v2: np.ndarray
    dD_v2: np.ndarray
    G_uv: np.ndarray
    G_vu: np.ndarray
    R: np.ndarray

    @property
    def S_u(self) -> np.ndarray:
        return self.B_u @ self.B_u.T

    @property
    def D_v(self) -> np.ndarray:
        k, s = self.k, self.D_v2.shape[0]
        out = np.zeros((k + s, k + s))
        out[:k, :k] = self.D_v1
        out[k:, k:] = self.D_v2
        return out

    def _blk(self, m, i, j):
        k = self.k
        rs = slice(0, k) if i == 0 else slice(k, None)
        cs = slice(0, k) if j == 0 else slice(k, None)
        return m[rs, cs]

    A1 = property(lambda f: f._blk(f.A, 0, 0))
    A2 = property(lambda f: f._blk(f.A, 0, 1))
    A3 = property(lambda f: f._blk(f.A, 1, 0))
    A4 = property(lambda f: f._blk(f.A, 1, 1))
    dA2 = property(lambda f: f._blk(f.dA, 0, 1))
    D_u1 = property(lambda f: f._blk(f.D_u, 0, 0))
    D_u2 = property(lambda f: f._blk(f.D_u, 0, 1))
    D_u3 = property(lambda f: f._blk(f.D_u, 1, 1))
    dD_u2 = property(lambda f: f._blk(f.dD_u, 0, 1))
    dD_u3 = property(lambda f: f._blk(f.dD_u, 1, 1))
    S_u1 = property(lambda f: f._blk(f.S_u, 0, 0))
    S_u2 = property(lambda f: f._blk(f.S_u, 0, 1))
    S_u3 = property(lambda f: f._blk(f.S_u, 1, 1))
    B_u1 = property(lambda f: f.B_u[: f.k])
    B_u2 = property(lambda f: f.B_u[f.k:])


@dataclass(frozen=True)
class TransformedGame:
    """The game in z = R_v^{-1} Z coordinates, where B_v = (0; I_s)."""

    game: GameSpec
    reduction: Reduction

    @property
    def n(self) -> int:
        return self.game.n

    @property
    def s(self) -> int:
        return self.game.s

    @property
    def r(self) -> int:
        return self.game.r

    @property
    def k(self) -> int:
        return self.game.n - self.game.s

    @property
    def tf(self) -> float:
        return self.game.tf

    @property
    def is_constant(self) -> bool:
        return self.reduction.is_constant

    @property
    def B_v(self) -> np.ndarray:
        return np.vstack([np.zeros((self.k, self.s)), np.eye(self.s)])

    @cached_property
    def z0(self) -> np.ndarray:
        R = self.reduction.R_jet(0.0)[0]
        return np.linalg.solve(R, self.game.Z0)

    @cached_property
    def _const_frame(self) -> Frame:
        return self._compute_frame(0.0)

    @cached_property
    def _frames(self) -> dict:
        return {}

    def frame(self, t: float) -> Frame:
        if self.is_constant:
            return self._const_frame
        t = float(t)
        cache = self._frames
        f = cache.get(t)
        if f is None:
            if len(cache) >= FRAME_CACHE:
                cache.clear()
            f = cache[t] = self._compute_frame(t)
        return f

    def _compute_frame(self, t: float) -> Frame:
        g = self.game
        R, dR, ddR = self.reduction.R_jet(t)
        Ac, dAc = g.A_cal.jet(t, 1)
        Du, dDu = g.D_u_cal.jet(t, 1)
        Dv = g.D_v_cal(t)
        A = np.linalg.solve(R, Ac @ R - dR)
        dA = np.linalg.solve(R, dAc @ R + Ac @ dR - ddR - dR @ A)
        B_u = np.linalg.solve(R, g.B_u_cal(t))
        D_u = R.T @ Du @ R
        dD_u = dR.T @ Du @ R + R.T @ dDu @ R + R.T @ Du @ dR
        L = R[:, : self.k]
        Bv, dBv = g.B_v_cal.jet(t, 1)
        dDv = g.D_v_cal.derivative()(t)
        D_v1 = L.T @ Dv @ L
        D_v2 = Bv.T @ Dv @ Bv
        dD_v2 = dBv.T @ Dv @ Bv + Bv.T @ dDv @ Bv + Bv.T @ Dv @ dBv
        return Frame(
            t=t, k=self.k, A=A, dA=dA, B_u=B_u, D_u=0.5 * (D_u + D_u.T), dD_u=0.5 * (dD_u + dD_u.T),
            D_v1=0.5 * (D_v1 + D_v1.T), D_v2=0.5 * (D_v2 + D_v2.T), dD_v2=0.5 * (dD_v2 + dD_v2.T),
            G_uv=g.G_uv(t), G_vu=g.G_vu(t), R=R,
        )

    def block(self, name: str) -> Callable[[float], np.ndarray]:
        """Evaluator t -> coefficient block, e.g. ``tg.block('A2')(0.0)``."""
        return lambda t: getattr(self.frame(t), name)

    def D_v_offdiag(self, t: float) -> np.ndarray:
        """Off-diagonal block L_v' Dcal_v B_v of the transformed follower weight."""
        g = self.game
        R = self.reduction.R_jet(t)[0]
        return R[:, : self.k].T @ g.D_v_cal(t) @ g.B_v_cal(t)


def transform_game(g: GameSpec, reduction: Reduction | None = None) -> TransformedGame:
    """Apply the reducing transformation (with the game's or an automatic complement)."""
    if reduction is None:
        reduction = build_reduction(g)
    tg = TransformedGame(g, reduction)
    for t in sample_times(g.tf, 11):
        f = tg.frame(t)
        if not is_pd(f.D_v2):
            lam, _ = min_eig_margin(f.D_v2)
            raise AssumptionError("A4", float(t), lam, "transformed D_v2 not positive definite")
    return tg


def map_state_back(tg: TransformedGame, t: Sequence[float], z: np.ndarray) -> np.ndarray:
    """Z(t_k) = R_v(t_k) z(t_k) for every row of ``z``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape != (t.size, tg.n):
        raise StructuralError(f"trajectory shape {z.shape} does not match ({t.size}, {tg.n})")
    if tg.is_constant:
        return z @ tg.frame(0.0).R.T
    return np.stack([tg.reduction.R_jet(float(ti))[0] @ zi for ti, zi in zip(t, z)])


# ---------------------------------------------------------------------------
# built-in supply-chain game


@dataclass(frozen=True)
class SupplyChainParams:
    a1: float = 0.1
    a2: float = 0.2
    b1: float = 0.5
    b2: float = 0.4
    c1: float = 0.2
    c2: float = 0.6
    kM: float = 1.0
    kR: float = 5.0
    tf: float = 2.0
    Z0: tuple[float, float] = (1.0, 1.0)


def supply_chain_game(params: SupplyChainParams = SupplyChainParams(), weight_u: float = 1.0,
                      weight_v: float = 1.0) -> GameSpec:
    """Manufacturer (leader) / retailer (follower) brand-badwill game.

    State Z = (B_NB, B_SB). The complement (c2, c1) is attached so that the
    transformed coefficients come out in their textbook closed forms.
    """
    p = params
    mf = MatrixFunction.constant
    return GameSpec(
        n=2, r=1, s=1, tf=p.tf,
        A_cal=mf([[p.a1, 0.0], [p.a2, 0.0]]),
        B_u_cal=mf([[-p.b1], [p.b2]]),
        B_v_cal=mf([[p.c1], [-p.c2]]),
        D_u_cal=mf([[p.kM, 0.0], [0.0, 0.0]]),
        D_v_cal=mf([[0.0, 0.0], [0.0, p.kR]]),
        G_uv=MatrixFunction.zeros(1, 1), G_vu=MatrixFunction.zeros(1, 1),
        Z0=np.array(p.Z0, dtype=float), weight_u=weight_u, weight_v=weight_v,
        complement=mf([[p.c2], [p.c1]]), name="supply_chain",
    )


BUILTIN_GAMES = {"supply_chain": supply_chain_game}


def resolve_game(spec: str) -> GameSpec:
    """A built-in game name or a path to a JSON/YAML game document."""
    if spec in BUILTIN_GAMES:
        return BUILTIN_GAMES[spec]()
    return load_game(spec)
