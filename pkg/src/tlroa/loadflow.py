"""Steady-state operating point of the two-converter plant.

The unknowns are the two complex bus voltages and the two PLL angles. At the
operating point the bus voltages satisfy ``v = v0 + Z i(x1, y1)`` and each PLL
has zeroed the q-axis voltage at its converter terminal:

    x1 = asin((r_T iq + w0 L_T id) / |v_wt|) + angle(v_wt)
    y1 = asin((r_S iq_st) / |v_st|) + angle(v_st)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from tlroa.model import PlantConfig, SystemState


class ConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(f"{msg}; residual history: {[f'{h:.3e}' for h in history]}")
        self.history = list(history)


class InfeasibleOperatingPoint(ValueError):
    """The converter cannot zero its PLL error at this bus voltage."""


@dataclass(frozen=True)
class Equilibrium:
    x1_0: float
    y1_0: float
    v_wt: complex
    v_st: complex
    residual_norm: float
    iterations: int = 0
    residual_history: tuple = field(default=(), repr=False)

    x3_0 = 0.0
    y3_0 = 0.0

    @property
    def state(self) -> np.ndarray:
        return np.array([self.x1_0, 0.0, self.y1_0, 0.0])

    def to_dict(self) -> dict:
        return {
            "x1_0": self.x1_0, "x3_0": 0.0, "y1_0": self.y1_0, "y3_0": 0.0,
            "v_wt": [self.v_wt.real, self.v_wt.imag],
            "v_st": [self.v_st.real, self.v_st.imag],
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Equilibrium":
        return cls(x1_0=float(d["x1_0"]), y1_0=float(d["y1_0"]),
                   v_wt=complex(*d["v_wt"]), v_st=complex(*d["v_st"]),
                   residual_norm=float(d["residual_norm"]),
                   iterations=int(d.get("iterations", 0)))


def _safe_asin(arg: float) -> float:
    if abs(arg) > 1.0 + 1e-9:
        raise InfeasibleOperatingPoint(
            f"asin argument {arg:.6g} outside [-1, 1]: transformer drop exceeds bus voltage")
    return math.asin(min(1.0, max(-1.0, arg)))


def _wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def injected_currents(config: PlantConfig, x1: float, y1: float) -> np.ndarray:
    """System-frame currents of the WT and the STATCOM."""
    wt, st = config.wt, config.statcom
    return np.array([complex(wt.id_c, wt.iq_c) * np.exp(1j * x1),
                     1j * st.iq_st * np.exp(1j * y1)])


def _residual(z: np.ndarray, config: PlantConfig) -> np.ndarray:
    wt, st, g = config.wt, config.statcom, config.grid
    v = np.array([complex(z[0], z[1]), complex(z[2], z[3])])
    x1, y1 = z[4], z[5]
    zmat = config.network.impedance(g.omega_0)
    mismatch = v - (g.v0 + zmat @ injected_currents(config, x1, y1))
    arg_wt = (wt.r_lg * wt.iq_c + g.omega_0 * wt.l_g * wt.id_c) / abs(v[0])
    arg_st = st.r_ls * st.iq_st / abs(v[1])
    r_x = _wrap(x1 - _safe_asin(arg_wt) - np.angle(v[0]))
    r_y = _wrap(y1 - _safe_asin(arg_st) - np.angle(v[1]))
    return np.array([mismatch[0].real, mismatch[0].imag, mismatch[1].real, mismatch[1].imag,
                     r_x, r_y])


def _fd_jacobian(fun, z, step):
    n = z.size
    jac = np.empty((n, n))
    for k in range(n):
        dz = np.zeros(n)
        dz[k] = step
        jac[:, k] = (fun(z + dz) - fun(z - dz)) / (2 * step)
    return jac


def _check_quadratic_tail(history) -> None:
    tail = [h for h in history if h > 1e-14]
    if len(tail) < 3:
        return
    e0, e1, e2 = tail[-3:]
    if not (e0 < 1 and e2 / e1 <= (e1 / e0) ** 1.5):
        warnings.warn(f"Newton tail is not superlinear: {e0:.2e}, {e1:.2e}, {e2:.2e}",
                      RuntimeWarning, stacklevel=3)


def solve_equilibrium(config: PlantConfig, guess=None, tol: float = 1e-10,
                      max_iter: int = 50, fd_step: float = 1e-7) -> Equilibrium:
    """Newton solve of the operating point from ``guess`` = (x1, y1).

    The default guess is the open-circuit voltage angles. Only the solution
    reached from the guess is returned; other equilibria are not searched.
    """
    v0 = config.grid.v0
    if guess is None:
        guess = (np.angle(v0[0]), np.angle(v0[1]))
    z = np.array([v0[0].real, v0[0].imag, v0[1].real, v0[1].imag, guess[0], guess[1]], float)

    def fun(zz):
        return _residual(zz, config)

    res = fun(z)
    history = [float(np.max(np.abs(res)))]
    it = 0
    polish = 0
    while it < max_iter:
        if history[-1] < tol:
            # a couple of extra steps bring the residual to round-off level
            if polish >= 2 or history[-1] < 1e-15:
                break
            polish += 1
        jac = _fd_jacobian(fun, z, fd_step)
        try:
            dz = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Newton Jacobian at iteration {it}", history) from exc
        z_new = z + dz
        res_new = fun(z_new)
        it += 1
        if polish and np.max(np.abs(res_new)) >= history[-1]:
            break
        z, res = z_new, res_new
        history.append(float(np.max(np.abs(res))))
    if history[-1] >= tol:
        raise ConvergenceError(f"no convergence in {max_iter} Newton iterations", history)
    _check_quadratic_tail(history)
    return Equilibrium(x1_0=float(z[4]), y1_0=float(z[5]), v_wt=complex(z[0], z[1]),
                       v_st=complex(z[2], z[3]), residual_norm=history[-1], iterations=it,
                       residual_history=tuple(history))


def shift_to_origin(state, eq: Equilibrium):
    """State relative to the operating point: (x1 - x1_0, x3, y1 - y1_0, y3)."""
    if isinstance(state, SystemState):
        return SystemState.from_array(shift_to_origin(state.as_array(), eq))
    return np.asarray(state, dtype=float) - eq.state


def unshift(state, eq: Equilibrium):
    if isinstance(state, SystemState):
        return SystemState.from_array(unshift(state.as_array(), eq))
    return np.asarray(state, dtype=float) + eq.state
