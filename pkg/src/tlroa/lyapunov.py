"""Linearisation at the operating point, quadratic Lyapunov function, and the
initial region-of-attraction ellipsoid used to seed reverse-time integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tlroa.loadflow import Equilibrium
from tlroa.model import PlantConfig

STATE_NAMES = ("x1", "x2", "y1", "y2")


class StabilityError(ValueError):
    """The linearised plant is not Hurwitz, so no quadratic Lyapunov function exists."""


@dataclass(frozen=True, eq=False)
class LinearModel:
    a_wt: np.ndarray
    a_st: np.ndarray
    a_full: np.ndarray
    gamma_wt: float
    gamma_st: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.a_full)


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """``{x : x' P x <= level}`` in coordinates shifted to the operating point."""

    p: np.ndarray
    level: float = 1e-3
    center: np.ndarray = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(p, p.T, rtol=0, atol=1e-12 * max(1.0, np.abs(p).max())):
            raise ValueError("P must be symmetric")
        if np.min(np.linalg.eigvalsh(p)) <= 0:
            raise ValueError("P must be positive definite")
        if not self.level > 0:
            raise ValueError(f"level must be > 0 (got {self.level})")
        object.__setattr__(self, "p", 0.5 * (p + p.T))
        object.__setattr__(self, "center", np.zeros(p.shape[0]) if self.center is None
                           else np.asarray(self.center, dtype=float))

    def value(self, x) -> np.ndarray:
        """Quadratic form of each row of ``x`` (shifted coordinates)."""
        d = np.atleast_2d(x) - self.center
        v = np.einsum("ni,ij,nj->n", d, self.p, d)
        return v if np.ndim(x) > 1 else v[0]

    def contains(self, x, rtol: float = 0.0):
        return self.value(x) <= self.level * (1 + rtol)

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "level": self.level, "center": self.center.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipsoid":
        return cls(p=np.asarray(d["p"]), level=float(d["level"]), center=d.get("center"))


def pll_block(kp: float, ki: float, inertia: float, l_eff: float, i_d: float,
              v_sync: float, v_damp: float) -> np.ndarray:
    """2x2 Jacobian of one PLL at its operating point (stable branch).

    ``v_sync`` is the in-phase voltage that produces the synchronising torque
    and ``v_damp`` the one in the damping term. Against a stiff source both
    equal V*sqrt(1 - gamma^2) and ``l_eff`` is the transformer inductance.
    """
    return np.array([[0.0, 1.0],
                     [-ki * v_sync / inertia, (ki * l_eff * i_d - kp * v_damp) / inertia]])


def linearize(config: PlantConfig, eq: Equilibrium, coupling: str = "full") -> LinearModel:
    """Analytic Jacobian of the plant at ``eq`` in (x1, x3, y1, y3).

    ``coupling='full'`` keeps the WT/STATCOM cross terms through the mutual
    network impedance; ``'block'`` drops them (block-diagonal A).
    """
    if coupling not in ("full", "block"):
        raise ValueError(f"coupling must be 'full' or 'block' (got {coupling!r})")
    wt, st, g, net = config.wt, config.statcom, config.grid, config.network
    w0 = g.omega_0
    zmat = net.impedance(w0)
    i1 = complex(wt.id_c, wt.iq_c)
    i2 = 1j * st.iq_st
    e1 = np.exp(1j * eq.x1_0)
    e2 = np.exp(1j * eq.y1_0)
    rot12 = e2 / e1  # exp(j(y1 - x1))

    # source-side voltage behind the self impedance, in each converter frame
    src1 = g.v0[0] / e1 + zmat[0, 1] * i2 * rot12
    src2 = g.v0[1] / e2 + zmat[1, 0] * i1 / rot12
    u1 = eq.v_wt / e1
    u2 = eq.v_st / e2
    m = wt.inertia

    a_wt = pll_block(wt.kp, wt.ki, m, wt.l_g + net.l[0, 0], wt.id_c, src1.real, u1.real)
    a_st = pll_block(st.kp, st.ki, 1.0, st.l_s + net.l[1, 1], 0.0, src2.real, u2.real)

    a = np.zeros((4, 4))
    a[:2, :2] = a_wt
    a[2:, 2:] = a_st
    if coupling == "full":
        mut12 = zmat[0, 1] * i2 * rot12
        mut21 = zmat[1, 0] * i1 / rot12
        a[1, 2] = wt.ki * mut12.real / m
        a[1, 3] = wt.ki * net.l[0, 1] * (i2 * rot12).real / m
        a[3, 0] = st.ki * mut21.real
        a[3, 1] = st.ki * net.l[1, 0] * (i1 / rot12).real

    gamma_wt = math.sin(eq.x1_0 - np.angle(eq.v_wt))
    gamma_st = math.sin(eq.y1_0 - np.angle(eq.v_st))
    if np.max(np.linalg.eigvals(a).real) >= 0:
        raise StabilityError(f"linearised plant is not Hurwitz: eig = {np.linalg.eigvals(a)}")
    return LinearModel(a_wt=a_wt, a_st=a_st, a_full=a, gamma_wt=gamma_wt, gamma_st=gamma_st)


def _sym_basis(n):
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    return idx


def solve_lyapunov(a, q=None) -> np.ndarray:
    """Solve ``P A + A' P + Q = 0`` for symmetric P by direct vectorisation.

    Only the n(n+1)/2 independent entries of P are unknowns.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    q = np.eye(n) if q is None else np.asarray(q, dtype=float)
    if np.max(np.linalg.eigvals(a).real) >= 0:
        raise StabilityError("A is not Hurwitz; the Lyapunov equation has no SPD solution")
    idx = _sym_basis(n)
    m = np.empty((len(idx), len(idx)))
    for col, (i, j) in enumerate(idx):
        e = np.zeros((n, n))
        e[i, j] = e[j, i] = 1.0
        lhs = e @ a + a.T @ e
        m[:, col] = [lhs[r, c] for r, c in idx]
    rhs = -np.array([q[r, c] for r, c in idx])
    sol = np.linalg.solve(m, rhs)
    p = np.zeros((n, n))
    for val, (i, j) in zip(sol, idx):
        p[i, j] = p[j, i] = val
    return p


def lyapunov_residual(p, a, q=None) -> float:
    q = np.eye(len(a)) if q is None else q
    return float(np.max(np.abs(p @ a + a.T @ p + q)))


def build_initial_roa(p, level: float = 1e-3) -> Ellipsoid:
    return Ellipsoid(p=p, level=level)


# root of x^4 = x + 4, used by the super-Fibonacci spiral on S^3
_PSI = 1.533751168755204288118041
_PHI = math.sqrt(2.0)


def unit_sphere_points(n: int, strategy: str = "fibonacci", seed: int = 0) -> np.ndarray:
    """``n`` points on the unit 3-sphere, shape (n, 4)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if strategy == "fibonacci":
        s = np.arange(n) + 0.5
        r = np.sqrt(s / n)
        big_r = np.sqrt(1.0 - s / n)
        alpha = 2 * np.pi * s / _PHI
        beta = 2 * np.pi * s / _PSI
        return np.column_stack([r * np.sin(alpha), r * np.cos(alpha),
                                big_r * np.sin(beta), big_r * np.cos(beta)])
    if strategy == "random-uniform":
        g = np.random.default_rng(seed).standard_normal((n, 4))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def to_boundary(e: Ellipsoid, unit_points) -> np.ndarray:
    """Map unit-sphere points onto the ellipsoid surface x' P x = level."""
    chol = np.linalg.cholesky(e.level * np.linalg.inv(e.p))
    return np.asarray(unit_points) @ chol.T + e.center


def sample_boundary(e: Ellipsoid, n: int, strategy: str = "fibonacci", seed: int = 0) -> np.ndarray:
    return to_boundary(e, unit_sphere_points(n, strategy, seed))


def quadratic_form_terms(p, names=STATE_NAMES) -> dict:
    """Monomial coefficients of x' P x, e.g. {'x1^2': ..., 'x1*x2': ...}."""
    p = np.asarray(p)
    terms = {}
    for i in range(len(names)):
        terms[f"{names[i]}^2"] = float(p[i, i])
        for j in range(i + 1, len(names)):
            terms[f"{names[i]}*{names[j]}"] = float(2 * p[i, j])
    return terms
