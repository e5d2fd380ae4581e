"""Reduced-order model of an aggregated WT converter and a STATCOM.

Both converters are grid-following units whose slow dynamics are the PLL:

    dx1/dt = x2,   x2 = x2_max * tanh(x3 / x2_max)
    M dx3/dt = Tm - Te - D * x2

with the PLL measuring the voltage of its own collector bus. The two buses
are coupled through a fitted 2x2 RL network (see :mod:`tlroa.netfit`) and an
open-circuit (Thevenin) voltage per bus.

All quantities are per-unit on the single-converter base; inductances are in
pu-seconds so that ``omega_0 * L`` is the pu reactance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from tlroa import _core


class ParameterError(ValueError):
    """A parameter violates its documented constraint."""


class AggregationError(RuntimeError):
    """Aggregation applied to parameters that are already aggregated."""


class SingularInertiaError(ArithmeticError):
    """The WT effective inertia 1 - kp*L_g*i_d vanishes."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


@dataclass(frozen=True)
class WtParams:
    """Aggregated (or single) type-4 WT converter."""

    kp: float
    ki: float
    r_lg: float
    l_g: float
    id_c: float = 1.0
    iq_c: float = 0.0
    i_max: float = 1.1
    k_factor: float = 2.0
    id_ramp: float = 2.0
    n_turbines: int = 1
    x2_max: float = 2 * math.pi * 5
    aggregated: bool = False

    def __post_init__(self):
        _require(self.kp > 0, f"wt.kp > 0 (got {self.kp})")
        _require(self.ki > 0, f"wt.ki > 0 (got {self.ki})")
        _require(self.r_lg >= 0, f"wt.r_lg >= 0 (got {self.r_lg})")
        _require(self.l_g > 0, f"wt.l_g > 0 (got {self.l_g})")
        _require(int(self.n_turbines) == self.n_turbines and self.n_turbines >= 1,
                 f"wt.n_turbines >= 1 integer (got {self.n_turbines})")
        _require(self.i_max > 0, f"wt.i_max > 0 (got {self.i_max})")
        _require(self.x2_max > 0, f"wt.x2_max > 0 (got {self.x2_max})")
        _require(self.k_factor >= 0, f"wt.k_factor >= 0 (got {self.k_factor})")
        _require(self.id_ramp >= 0, f"wt.id_ramp >= 0 (got {self.id_ramp})")
        _require(math.hypot(self.id_c, self.iq_c) <= self.i_max * (1 + 1e-12),
                 f"wt |id_c + j iq_c| <= i_max (got {math.hypot(self.id_c, self.iq_c)} > {self.i_max})")

    @property
    def unit_count(self) -> int:
        """Number of turbines folded into the current/impedance values."""
        return int(self.n_turbines) if self.aggregated else 1

    @property
    def inertia(self) -> float:
        return 1.0 - self.kp * self.l_g * self.id_c


@dataclass(frozen=True)
class StatcomParams:
    kp: float
    ki: float
    r_ls: float
    l_s: float
    iq_st: float = 1.0
    iq_fault: float = 1.0
    y2_max: float = 2 * math.pi * 5

    def __post_init__(self):
        _require(self.kp > 0, f"statcom.kp > 0 (got {self.kp})")
        _require(self.ki > 0, f"statcom.ki > 0 (got {self.ki})")
        _require(self.r_ls >= 0, f"statcom.r_ls >= 0 (got {self.r_ls})")
        _require(self.l_s > 0, f"statcom.l_s > 0 (got {self.l_s})")
        _require(self.y2_max > 0, f"statcom.y2_max > 0 (got {self.y2_max})")


@dataclass(frozen=True)
class GridBoundary:
    """Open-circuit voltages of the WT bus (index 0) and STATCOM bus (index 1)."""

    v_mag_0: tuple[float, float] = (1.0, 1.0)
    theta_g0: tuple[float, float] = (0.0, 0.0)
    omega_0: float = 2 * math.pi * 50
    v_dot: float = 0.0
    omega_dot: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v_mag_0", tuple(float(v) for v in self.v_mag_0))
        object.__setattr__(self, "theta_g0", tuple(float(v) for v in self.theta_g0))
        _require(len(self.v_mag_0) == 2 and len(self.theta_g0) == 2,
                 "grid.v_mag_0 and grid.theta_g0 need one entry per bus")
        _require(all(v >= 0 for v in self.v_mag_0), f"grid.v_mag_0 >= 0 (got {self.v_mag_0})")
        _require(self.omega_0 > 0, f"grid.omega_0 > 0 (got {self.omega_0})")

    @property
    def v0(self) -> np.ndarray:
        return np.array([v * np.exp(1j * th) for v, th in zip(self.v_mag_0, self.theta_g0)])


@dataclass(frozen=True, eq=False)
class NetworkCoupling:
    """RL equivalent of the collector network (pu and pu-seconds inside the model;
    ohm and henry when produced by the scan fit, before config conversion)."""

    r: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        ell = np.array(self.l, dtype=float)
        _require(r.shape == (2, 2) and ell.shape == (2, 2), "network r and l must be 2x2")
        _require(bool(np.all(np.isfinite(r)) and np.all(np.isfinite(ell))), "network r, l finite")
        _require(r[0, 0] >= 0 and r[1, 1] >= 0, "network self resistances r11, r22 >= 0")
        _require(ell[0, 0] > 0 and ell[1, 1] > 0, "network self inductances l11, l22 > 0")
        r.flags.writeable = False
        ell.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "l", ell)

    def impedance(self, omega: float) -> np.ndarray:
        return self.r + 1j * omega * self.l

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "l": self.l.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkCoupling":
        return cls(r=np.asarray(d["r"], dtype=float), l=np.asarray(d["l"], dtype=float))


@dataclass(frozen=True)
class PlantConfig:
    wt: WtParams
    statcom: StatcomParams
    grid: GridBoundary
    network: NetworkCoupling

    def __post_init__(self):
        if self.wt.inertia == 0.0:
            raise SingularInertiaError("1 - kp*L_g*id_c = 0; the WT PLL model is singular")

    def plant_vector(self) -> np.ndarray:
        p = _plant_vector_partial(self.network, self.grid)
        w, s = self.wt, self.statcom
        p[_core.P_KP_W], p[_core.P_KI_W] = w.kp, w.ki
        p[_core.P_R_T], p[_core.P_L_T], p[_core.P_X2MAX] = w.r_lg, w.l_g, w.x2_max
        p[_core.P_KP_S], p[_core.P_KI_S] = s.kp, s.ki
        p[_core.P_R_S], p[_core.P_L_S], p[_core.P_Y2MAX] = s.r_ls, s.l_s, s.y2_max
        p[_core.P_IX2MAX], p[_core.P_IY2MAX] = 1.0 / w.x2_max, 1.0 / s.y2_max
        return p


@dataclass(frozen=True)
class SystemState:
    """Dynamic states; ``x2``/``y2`` are derived through the saturation."""

    x1: float
    x3: float
    y1: float
    y3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x3, self.y1, self.y3])

    @classmethod
    def from_array(cls, a) -> "SystemState":
        a = np.asarray(a, dtype=float)
        return cls(*map(float, a[:4]))

    def saturated(self, wt: WtParams, st: StatcomParams) -> tuple[float, float]:
        return saturate(self.x3, wt.x2_max), saturate(self.y3, st.y2_max)


@dataclass(frozen=True)
class InjectionSchedule:
    """Piecewise current schedule: normal -> fault -> post-fault ramp.

    During the fault the WT follows the K-factor law on the retained voltage
    ``v_fault`` (reactive current capped at 1 pu per turbine, active current
    from the current-limit circle) and the STATCOM injects ``iq_fault``. After
    clearing the reactive setpoint returns at once and the active current ramps
    back to its setpoint. ``frt=False`` keeps pre-fault currents during the dip.
    """

    t_fault_on: float = math.inf
    t_clear: float = math.inf
    v_fault: float = 0.01
    frt: bool = True
    ramp: float | None = None

    def __post_init__(self):
        if not math.isinf(self.t_fault_on) or not math.isinf(self.t_clear):
            _require(self.t_fault_on < self.t_clear,
                     f"schedule t_fault_on < t_clear (got {self.t_fault_on} >= {self.t_clear})")
        _require(self.v_fault >= 0, f"schedule v_fault >= 0 (got {self.v_fault})")

    @classmethod
    def normal(cls) -> "InjectionSchedule":
        return cls()

    def mode(self, t: float) -> str:
        if t < self.t_fault_on:
            return "normal"
        if t < self.t_clear:
            return "fault"
        return "post_fault_ramp"

    def fault_currents(self, wt: WtParams) -> tuple[float, float]:
        """(id, iq) injected by the WT during the fault, aggregated pu."""
        if not self.frt:
            return wt.id_c, wt.iq_c
        scale = wt.unit_count
        i_max_unit = wt.i_max / scale
        iq_unit = min(wt.k_factor * self.v_fault, 1.0, i_max_unit)
        # deep saturation: the current circle leaves no room for active current
        id_unit = math.sqrt(max(i_max_unit ** 2 - iq_unit ** 2, 0.0))
        return id_unit * scale, iq_unit * scale

    def ramp_duration(self, wt: WtParams) -> float:
        id_f, _ = self.fault_currents(wt)
        ramp = wt.id_ramp if self.ramp is None else self.ramp
        gap = abs(wt.id_c - id_f)
        if gap == 0.0:
            return 0.0
        return math.inf if ramp == 0 else gap / ramp

    def vector(self, cfg: PlantConfig) -> np.ndarray:
        wt = cfg.wt
        id_f, _ = self.fault_currents(wt)
        for ident in (wt.id_c, id_f):
            if 1.0 - wt.kp * wt.l_g * ident == 0.0:
                raise SingularInertiaError(f"1 - kp*L_g*id = 0 at id = {ident}")
        if (1.0 - wt.kp * wt.l_g * wt.id_c) * (1.0 - wt.kp * wt.l_g * id_f) < 0:
            raise SingularInertiaError("WT inertia changes sign along the active-current ramp")
        return self.vector_from(wt, cfg.statcom)

    def currents(self, t: float, wt: WtParams, st: StatcomParams) -> dict:
        """Scheduled currents at ``t`` (aggregated pu) and their rates."""
        sv = self.vector_from(wt, st)
        id_, iq, did, diq, iq_st, v_scale = _core.injections(float(t), self.t_fault_on,
                                                              self.t_clear, sv)
        return dict(id=id_, iq=iq, did=did, diq=diq, iq_st=iq_st, v_scale=v_scale)

    def vector_from(self, wt: WtParams, st: StatcomParams) -> np.ndarray:
        id_f, iq_f = self.fault_currents(wt)
        return np.array([wt.id_c, wt.iq_c, id_f, iq_f, st.iq_st, st.iq_fault, self.v_fault,
                         wt.id_ramp if self.ramp is None else self.ramp])


def saturate(x3, x_max):
    """PLL frequency saturation ``x_max * tanh(x3 / x_max)``."""
    if x_max <= 0:
        raise ParameterError(f"saturation limit must be > 0 (got {x_max})")
    return x_max * np.tanh(x3 / x_max)


def aggregate_scaling(params: WtParams) -> WtParams:
    """Fold ``n_turbines`` identical WTs into one equivalent unit.

    Currents (setpoints, limit, ramp) scale up by N and the transformer
    impedance scales down by N. Applying it twice is an error.
    """
    if params.aggregated:
        raise AggregationError("WT parameters are already aggregated")
    n = int(params.n_turbines)
    return replace(params, id_c=params.id_c * n, iq_c=params.iq_c * n, i_max=params.i_max * n,
                   id_ramp=params.id_ramp * n, r_lg=params.r_lg / n, l_g=params.l_g / n,
                   aggregated=True)


def bus_voltages(state: SystemState, injections: dict, coupling: NetworkCoupling,
                 grid: GridBoundary, current_derivatives: dict | None = None,
                 wt: WtParams | None = None, st: StatcomParams | None = None,
                 v_scale: float = 1.0, t: float = 0.0) -> tuple[complex, complex]:
    """WT and STATCOM bus voltages (system frame, complex d + jq).

    ``injections`` holds converter-frame currents ``id``, ``iq`` (WT) and
    ``iq_st``; ``current_derivatives`` the matching ``did``, ``diq``,
    ``diq_st`` (default zero). ``wt``/``st`` supply the saturation limits for
    the rotation-rate terms (default: no saturation).
    """
    dd = current_derivatives or {}
    x2 = saturate(state.x3, wt.x2_max) if wt else state.x3
    y2 = saturate(state.y3, st.y2_max) if st else state.y3
    p = _plant_vector_partial(coupling, grid)
    v01, v02 = _core.open_circuit(t, p, v_scale)
    i1 = complex(injections.get("id", 0.0), injections.get("iq", 0.0))
    di1 = complex(dd.get("did", 0.0), dd.get("diq", 0.0))
    i2 = 1j * injections.get("iq_st", 0.0)
    di2 = 1j * dd.get("diq_st", 0.0)
    return _core.bus_voltages(np.exp(1j * state.x1), x2, np.exp(1j * state.y1), y2,
                              i1, di1, i2, di2, v01, v02, p)


def _plant_vector_partial(coupling: NetworkCoupling, grid: GridBoundary) -> np.ndarray:
    p = np.zeros(_core.N_PLANT)
    p[_core.P_W0] = grid.omega_0
    p[_core.P_V1], p[_core.P_TH1] = grid.v_mag_0[0], grid.theta_g0[0]
    p[_core.P_V2], p[_core.P_TH2] = grid.v_mag_0[1], grid.theta_g0[1]
    p[_core.P_VDOT], p[_core.P_WDOT] = grid.v_dot, grid.omega_dot
    v0 = grid.v0
    p[_core.P_V1RE], p[_core.P_V1IM] = v0[0].real, v0[0].imag
    p[_core.P_V2RE], p[_core.P_V2IM] = v0[1].real, v0[1].imag
    p[_core.P_R11:_core.P_R22 + 1] = coupling.r.ravel()
    p[_core.P_L11:_core.P_L22 + 1] = coupling.l.ravel()
    return p


def wt_rhs(x1: float, x3: float, v_bus: complex, params: WtParams, grid: GridBoundary,
           currents: dict | None = None) -> tuple[float, float]:
    """(dx1/dt, dx3/dt) of the WT PLL given its bus voltage (system frame)."""
    c = currents or {}
    id_ = c.get("id", params.id_c)
    m = 1.0 - params.kp * params.l_g * id_
    if m == 0.0:
        raise SingularInertiaError("1 - kp*L_g*id = 0; refusing to integrate")
    x2 = saturate(x3, params.x2_max)
    dx3 = _core.pll_accel(np.exp(1j * x1), x2, complex(v_bus), params.kp, params.ki,
                          params.r_lg, params.l_g, id_, c.get("iq", params.iq_c),
                          c.get("did", 0.0), c.get("diq", 0.0), grid.omega_0,
                          grid.v_dot, grid.omega_dot)
    return x2, dx3


def statcom_rhs(y1: float, y3: float, v_bus: complex, params: StatcomParams,
                grid: GridBoundary, currents: dict | None = None) -> tuple[float, float]:
    """(dy1/dt, dy3/dt) of the STATCOM PLL; same law as the WT with zero active current."""
    c = currents or {}
    y2 = saturate(y3, params.y2_max)
    dy3 = _core.pll_accel(np.exp(1j * y1), y2, complex(v_bus), params.kp, params.ki,
                          params.r_ls, params.l_s, 0.0, c.get("iq_st", params.iq_st),
                          0.0, c.get("diq_st", 0.0), grid.omega_0, grid.v_dot, grid.omega_dot)
    return y2, dy3


@dataclass(frozen=True, eq=False)
class PlantRhs:
    """Callable ``f(t, x)`` for a config and schedule; x has shape (4,) or (n, 4).

    ``t_clear`` may be overridden per row (array of length n) so a batch of
    clearing instants integrates in one call.
    """

    config: PlantConfig
    schedule: InjectionSchedule = field(default_factory=InjectionSchedule)
    direction: int = 1
    p: np.ndarray = field(init=False, repr=False)
    sv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ParameterError("direction must be +1 (forward) or -1 (reverse)")
        object.__setattr__(self, "p", self.config.plant_vector())
        object.__setattr__(self, "sv", self.schedule.vector(self.config))

    def reversed(self) -> "PlantRhs":
        return PlantRhs(self.config, self.schedule, -self.direction)

    def timing(self, n: int, t_clear=None) -> tuple[np.ndarray, np.ndarray]:
        t_on = np.full(n, self.schedule.t_fault_on)
        tc = np.full(n, self.schedule.t_clear) if t_clear is None else \
            np.broadcast_to(np.asarray(t_clear, dtype=float), (n,)).copy()
        return t_on, tc

    def __call__(self, t, x, t_clear=None):
        x = np.asarray(x, dtype=float)
        flat = np.ascontiguousarray(np.atleast_2d(x))
        out = np.empty_like(flat)
        t_on, tc = self.timing(flat.shape[0], t_clear)
        _core.rhs_many(float(t), flat, self.p, self.sv, t_on, tc, float(self.direction), out)
        return out.reshape(x.shape)


def system_rhs(t: float, state, config: PlantConfig,
               schedule: InjectionSchedule | None = None, direction: str = "forward"):
    """Full 4-state right-hand side; ``direction='reverse'`` returns -f."""
    if direction not in ("forward", "reverse"):
        raise ParameterError(f"direction must be 'forward' or 'reverse' (got {direction!r})")
    x = state.as_array() if isinstance(state, SystemState) else state
    f = PlantRhs(config, schedule or InjectionSchedule(), 1 if direction == "forward" else -1)
    return f(t, x)
