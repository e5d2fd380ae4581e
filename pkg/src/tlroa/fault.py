"""Fault-on trajectories, TLRoA membership along them, and clearing-time estimates.

A fault at the plant's connection point scales both open-circuit voltages to
the retained voltage ``v_fault`` while the converters switch to their
fault-ride-through currents. Clearing restores the voltages, steps the
reactive currents back and ramps the WT active current to its setpoint.

Two independent verdicts exist for every clearing instant:

* geometric: the fault-on state at that instant is a TLRoA member under the
  post-fault dynamics (forward simulation from the clearing state);
* simulated: the full sequence equilibrium -> fault -> clear -> ramp is
  integrated and the final state must be within ``tol`` of the operating
  point ``horizon`` seconds after the ramp has finished.

Angles are compared modulo 2*pi in both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tlroa.loadflow import Equilibrium
from tlroa.model import InjectionSchedule, PlantConfig, PlantRhs
from tlroa.roa import (DT_DEFAULT, ESCAPE_DEFAULT, TlRoa, Trajectory, integrate_batch,
                       is_member, wrap_angles)

CADENCE_DEFAULT = 0.01
CONVERGENCE_TOL = 1e-3


@dataclass(frozen=True)
class FaultScenario:
    t_on: float = 0.0
    duration_max: float = 1.2
    v_fault: float = 0.01
    post_fault_ramp: float | None = None
    fault_type: str = "bolted-3ph-at-connection-point"
    frt: bool = True

    def __post_init__(self):
        if not self.duration_max > 0:
            raise ValueError(f"duration_max > 0 required (got {self.duration_max})")
        if self.post_fault_ramp is not None and self.post_fault_ramp < 0:
            raise ValueError(f"post_fault_ramp >= 0 required (got {self.post_fault_ramp})")
        if self.v_fault < 0:
            raise ValueError(f"v_fault >= 0 required (got {self.v_fault})")

    def schedule(self, t_clear: float = math.inf) -> InjectionSchedule:
        return InjectionSchedule(t_fault_on=self.t_on, t_clear=t_clear, v_fault=self.v_fault,
                                 frt=self.frt, ramp=self.post_fault_ramp)

    def post_fault_schedule(self) -> InjectionSchedule:
        """Schedule for local time 0 = clearing instant (used for membership)."""
        return InjectionSchedule(t_fault_on=-1.0, t_clear=0.0, v_fault=self.v_fault,
                                 frt=self.frt, ramp=self.post_fault_ramp)


@dataclass(frozen=True, eq=False)
class CctReport:
    clearing_times: np.ndarray
    membership: np.ndarray
    entry_times: np.ndarray
    verdicts: np.ndarray
    final_norms: np.ndarray
    crossings: list
    windows: list
    cct: float | None
    candidate_times: list
    fault_trajectory: Trajectory
    message: str = ""
    scenario: FaultScenario = field(default_factory=FaultScenario)

    @property
    def agreement(self) -> float:
        return float(np.mean(self.membership == self.verdicts))

    @property
    def exits(self) -> int:
        return sum(1 for _, kind in self.crossings if kind == "exit")

    @property
    def reentries(self) -> int:
        return sum(1 for _, kind in self.crossings if kind == "entry")

    def to_dict(self) -> dict:
        return {
            "cct": None if self.cct is None else round(self.cct, 10),
            "message": self.message,
            "candidate_times": [round(t, 10) for t in self.candidate_times],
            "windows": [[round(a, 10), round(b, 10)] for a, b in self.windows],
            "crossings": [{"time": round(t, 10), "kind": k} for t, k in self.crossings],
            "agreement": self.agreement,
            "samples": [
                {"t_clear": round(float(t), 10), "member": bool(m),
                 "entry_time": None if math.isnan(e) else float(e),
                 "verdict": "stable" if v else "unstable", "final_norm": float(n)}
                for t, m, e, v, n in zip(self.clearing_times, self.membership,
                                         self.entry_times, self.verdicts, self.final_norms)],
            "scenario": {"t_on": self.scenario.t_on, "duration_max": self.scenario.duration_max,
                         "v_fault": self.scenario.v_fault,
                         "post_fault_ramp": self.scenario.post_fault_ramp,
                         "fault_type": self.scenario.fault_type},
        }


def simulate_fault(config: PlantConfig, eq: Equilibrium, scenario: FaultScenario,
                   dt: float = DT_DEFAULT, escape: float = ESCAPE_DEFAULT) -> Trajectory:
    """Sustained fault from the operating point over [t_on, t_on + duration_max]."""
    rhs = PlantRhs(config, scenario.schedule())
    res = integrate_batch(rhs, eq.state, scenario.t_on, scenario.duration_max, dt, "forward",
                          escape, center=eq.state, save_every=1)
    states = res.saved[0]
    stop = int(res.escaped_step[0])
    reason = ""
    if stop >= 0:
        states = states[:stop + 1]
        states = states[np.all(np.isfinite(states), axis=1)]
        reason = f"escape at step {stop}"
    times = scenario.t_on + dt * np.arange(len(states))
    return Trajectory(times, states, "forward", stop >= 0, reason)


def _sample_indices(traj: Trajectory, dt: float, cadence: float) -> np.ndarray:
    stride = int(round(cadence / dt))
    if stride < 1 or abs(stride * dt - cadence) > 1e-9:
        raise ValueError(f"cadence {cadence} must be a multiple of dt {dt}")
    return np.arange(0, len(traj), stride)


def membership_along(trajectory: Trajectory, roa: TlRoa, scenario: FaultScenario,
                     cadence: float = CADENCE_DEFAULT):
    """Post-fault TLRoA membership of the fault-on states sampled every ``cadence`` s.

    Returns (times, Membership, crossings) where crossings lists
    ``(time, 'exit' | 'entry')`` at the first sample of each new status.
    """
    idx = _sample_indices(trajectory, roa.dt, cadence)
    times = trajectory.times[idx]
    member = is_member(trajectory.states[idx], roa, scenario.post_fault_schedule(), t0=0.0,
                       absolute=True)
    crossings = []
    for k in range(1, len(idx)):
        if member.inside[k] != member.inside[k - 1]:
            crossings.append((float(times[k]), "entry" if member.inside[k] else "exit"))
    return times, member, crossings


def verify_clearing(config: PlantConfig, eq: Equilibrium, scenario: FaultScenario,
                    clearing_times, dt: float = DT_DEFAULT, horizon: float = 2.25,
                    tol: float = CONVERGENCE_TOL, escape: float = ESCAPE_DEFAULT):
    """Full-sequence simulation verdicts for a batch of clearing instants.

    Each run starts at the operating point at ``t_on`` and stops ``horizon``
    seconds after the active-current ramp has finished. Returns (stable,
    final_norm) with the norm of the shifted, angle-wrapped final state.
    """
    tc = np.asarray(clearing_times, dtype=float)
    sched = scenario.schedule()
    ramp = sched.ramp_duration(config.wt)
    if math.isinf(ramp):
        raise ValueError("post-fault ramp rate is zero: the ramp never completes")
    n_ramp = int(math.ceil(ramp / dt - 1e-9))
    n_clear = np.rint((tc - scenario.t_on) / dt).astype(np.int64)
    n_total = n_clear + n_ramp + int(round(horizon / dt))
    t_clear = scenario.t_on + dt * n_clear  # on the integration grid
    rhs = PlantRhs(config, sched)
    res = integrate_batch(rhs, np.repeat(eq.state[None, :], len(tc), axis=0), scenario.t_on,
                          n_total * dt, dt, "forward", escape, center=eq.state, t_clear=t_clear)
    d = wrap_angles(res.final, eq.state) - eq.state
    norms = np.linalg.norm(d, axis=1)
    norms[res.escaped | ~np.all(np.isfinite(d), axis=1)] = np.inf
    return norms < tol, norms


def _windows(times, inside) -> list:
    """Maximal runs of member samples as (first, last) time pairs."""
    out = []
    start = None
    for k, (t, m) in enumerate(zip(times, inside)):
        if m and start is None:
            start = t
        if not m and start is not None:
            out.append((float(start), float(times[k - 1])))
            start = None
    if start is not None:
        out.append((float(start), float(times[-1])))
    return out


def estimate_cct(config: PlantConfig, eq: Equilibrium, scenario: FaultScenario, roa: TlRoa,
                 cadence: float = CADENCE_DEFAULT, verify: bool = True) -> CctReport:
    """Classical CCT (last member sample before the first exit) plus re-entry windows.

    Every sampled clearing instant is also verified by full simulation so the
    report carries both verdicts side by side.
    """
    traj = simulate_fault(config, eq, scenario, roa.dt)
    times, member, crossings = membership_along(traj, roa, scenario, cadence)
    inside = member.inside
    windows = _windows(times, inside)
    if inside.all():
        cct = None
        message = f"CCT > duration_max ({scenario.duration_max} s): the fault trajectory never exits"
        candidates = []
    else:
        first_exit = int(np.argmin(inside))
        cct = float(times[first_exit - 1]) if first_exit > 0 else None
        message = "" if cct is not None else "unstable for every clearing time"
        candidates = ([cct] if cct is not None else []) + [
            float(t) for t, m, k in zip(times, inside, range(len(times))) if m and k > first_exit]
    if verify:
        verdicts, norms = verify_clearing(config, eq, scenario, times, roa.dt, roa.horizon)
    else:
        verdicts = np.zeros(len(times), dtype=bool)
        norms = np.full(len(times), np.nan)
    return CctReport(times, inside, member.time, verdicts, norms, crossings, windows, cct,
                     candidates, traj, message, scenario)
