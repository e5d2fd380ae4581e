"""JSON configuration: validation, defaults, and the one-time SI -> per-unit conversion.

Sections: ``base``, ``wt``, ``statcom``, ``grid``, ``network`` (or a fitted
network file), ``schedule`` and ``analysis``. ``wt``, ``statcom`` and
``network`` accept ``"units": "si"`` (the default) or ``"pu"``.

Per-unit base: the single converter rating S and the peak line-to-neutral
voltage V_b = V_ll * sqrt(2/3); I_b = S / (1.5 V_b), Z_b = V_b / I_b.
Inductances become pu-seconds (L / Z_b) so omega_0 * L is the pu reactance.
PLL gains given in SI act on volts, so they scale by V_b.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tlroa.fault import FaultScenario
from tlroa.roa import AXIS_NAMES as CLOUD_AXES
from tlroa.model import (AggregationError, GridBoundary, NetworkCoupling, ParameterError,
                         PlantConfig, StatcomParams, WtParams, aggregate_scaling)


class ConfigError(ValueError):
    """Schema or constraint violation; the message names the field."""


@dataclass(frozen=True)
class BaseValues:
    s_va: float = 12e6
    v_ll_rms: float = 690.0
    f_hz: float = 50.0

    @property
    def v_base(self) -> float:
        return self.v_ll_rms * math.sqrt(2.0 / 3.0)

    @property
    def i_base(self) -> float:
        return self.s_va / (1.5 * self.v_base)

    @property
    def z_base(self) -> float:
        return self.v_base / self.i_base

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.f_hz

    def network_to_pu(self, net: NetworkCoupling) -> NetworkCoupling:
        return NetworkCoupling(r=net.r / self.z_base, l=net.l / self.z_base)


@dataclass(frozen=True)
class AnalysisSettings:
    level: float = 1e-3
    horizon: float = 2.25
    n_samples: int = 4096
    dt: float = 1e-4
    seed: int = 0
    strategy: str = "fibonacci"
    escape: float = 1e3
    cadence: float = 0.01
    coupling: str = "full"
    # hyperplane slice of the cloud over ``slice_columns``; a null intercept
    # puts the plane through the cloud centroid
    slice_columns: tuple = ("x1", "x2", "y1", "y2")
    slice_normal: tuple = (1.0, 0.0, 0.0, 0.0)
    slice_intercept: float | None = None
    slice_thickness: float = 0.5
    project_axes: tuple = ("x1", "y1")

    def __post_init__(self):
        checks = [(self.level > 0, "analysis.level > 0"), (self.horizon >= 0, "analysis.horizon >= 0"),
                  (self.n_samples >= 1, "analysis.n_samples >= 1"), (self.dt > 0, "analysis.dt > 0"),
                  (self.escape > 0, "analysis.escape > 0"), (self.cadence > 0, "analysis.cadence > 0"),
                  (self.slice_thickness > 0, "analysis.slice_thickness > 0"),
                  (self.strategy in ("fibonacci", "random-uniform"),
                   "analysis.strategy in {fibonacci, random-uniform}"),
                  (self.coupling in ("full", "block"), "analysis.coupling in {full, block}"),
                  (len(self.slice_normal) == len(self.slice_columns),
                   "analysis.slice_normal has one entry per slice column"),
                  (set(self.slice_columns) | set(self.project_axes) <= set(CLOUD_AXES),
                   f"analysis.slice_columns and project_axes within {CLOUD_AXES}"),
                  (len(self.project_axes) == 2, "analysis.project_axes has two entries")]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass(frozen=True, eq=False)
class RunConfig:
    plant: PlantConfig
    scenario: FaultScenario
    analysis: AnalysisSettings
    base: BaseValues
    resolved: dict = field(repr=False)
    source: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.resolved)

    def with_overrides(self, section: str = "analysis", **kw) -> "RunConfig":
        """Copy with fields of one section replaced (``None`` values are ignored)."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        raw = copy.deepcopy(self.resolved)
        raw[section].update(kw)
        return from_dict(raw, source=self.source)


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_WT_FIELDS = {"kp", "ki", "r_lg", "l_g", "id_c", "iq_c", "i_max", "k_factor", "id_ramp",
              "n_turbines", "x2_max", "aggregated", "aggregate", "units"}
_ST_FIELDS = {"kp", "ki", "r_ls", "l_s", "iq_st", "iq_fault", "y2_max", "units"}
_GRID_FIELDS = {"v_mag_0", "theta_g0", "omega_0", "v_dot", "omega_dot"}
_SCHED_FIELDS = {"t_on", "duration_max", "v_fault", "post_fault_ramp", "frt", "fault_type",
                 "units"}
_SECTIONS = {"base", "wt", "statcom", "grid", "network", "network_file", "schedule", "analysis"}


def _number(sec: str, d: dict, key: str, default=None, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{sec}.{key} is required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{sec}.{key} must be a number (got {v!r})")
    if not math.isfinite(v):
        raise ConfigError(f"{sec}.{key} must be finite (got {v!r})")
    if integer and int(v) != v:
        raise ConfigError(f"{sec}.{key} must be an integer (got {v!r})")
    return int(v) if integer else float(v)


def _units(sec: str, d: dict) -> str:
    u = d.get("units", "si")
    if u not in ("si", "pu"):
        raise ConfigError(f"{sec}.units must be 'si' or 'pu' (got {u!r})")
    return u


def _unknown(sec: str, d: dict, allowed: set) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{sec}: unknown field(s) {sorted(extra)}")


def _positive(sec, key, v, strict=True):
    if (v <= 0) if strict else (v < 0):
        raise ConfigError(f"{key} {'>' if strict else '>='} 0 (got {sec}.{key} = {v})")
    return v


def load_config(path, network_file=None) -> RunConfig:
    """Read, validate and convert a JSON configuration.

    When the document has no ``network`` section, the coupling comes from
    ``network_file`` (argument or top-level key): the JSON written by the
    ``fit`` command. Relative paths resolve against the config's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if network_file is not None:
        raw["network_file"] = str(network_file)
    return from_dict(raw, base_dir=path.parent, source=str(path))


def read_network_file(path) -> dict:
    d = json.loads(Path(path).read_text())
    return d.get("network", d)


def from_dict(raw: dict, base_dir=None, source: str = "") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    _unknown("config", raw, _SECTIONS)
    raw = copy.deepcopy(raw)
    base_dir = Path(base_dir) if base_dir is not None else Path(".")

    b = raw.get("base", {})
    _unknown("base", b, {"s_va", "v_ll_rms", "f_hz"})
    base = BaseValues(_positive("base", "s_va", _number("base", b, "s_va", 12e6)),
                      _positive("base", "v_ll_rms", _number("base", b, "v_ll_rms", 690.0)),
                      _positive("base", "f_hz", _number("base", b, "f_hz", 50.0)))

    if "network" not in raw:
        if "network_file" not in raw:
            raise ConfigError("network section missing and no fitted network file given")
        nf = Path(raw.pop("network_file"))
        nf = nf if nf.is_absolute() else base_dir / nf
        raw["network"] = read_network_file(nf)
    else:
        raw.pop("network_file", None)

    wt, wt_res = _load_wt(raw.get("wt"), base)
    st, st_res = _load_statcom(raw.get("statcom"), base)
    grid, grid_res = _load_grid(raw.get("grid", {}), base)
    net, net_res = _load_network(raw["network"], base, base_dir)
    scenario, sched_res = _load_schedule(raw.get("schedule", {}), base, wt)
    an = raw.get("analysis", {})
    allowed = set(AnalysisSettings.__dataclass_fields__)
    _unknown("analysis", an, allowed)
    try:
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in an.items()}
        analysis = AnalysisSettings(**kw)
    except TypeError as exc:
        raise ConfigError(f"analysis: {exc}") from exc
    try:
        plant = PlantConfig(wt, st, grid, net)
    except (ParameterError, ArithmeticError) as exc:
        raise ConfigError(str(exc)) from exc
    an_res = {k: (list(v) if isinstance(v, tuple) else v)
              for k, v in analysis.__dict__.items()}
    resolved = {"base": {"s_va": base.s_va, "v_ll_rms": base.v_ll_rms, "f_hz": base.f_hz},
                "wt": wt_res, "statcom": st_res, "grid": grid_res, "network": net_res,
                "schedule": sched_res, "analysis": an_res}
    return RunConfig(plant, scenario, analysis, base, resolved, source)


def _load_wt(d, base: BaseValues):
    if d is None:
        raise ConfigError("wt section is required")
    _unknown("wt", d, _WT_FIELDS)
    u = _units("wt", d)
    vb, zb, ib = (base.v_base, base.z_base, base.i_base) if u == "si" else (1.0, 1.0, 1.0)
    kp = _positive("wt", "kp", _number("wt", d, "kp"))
    ki = _positive("wt", "ki", _number("wt", d, "ki"))
    res = dict(d)
    aggregated = d.get("aggregated", False)
    aggregate = d.get("aggregate", not aggregated)
    if not isinstance(aggregated, bool) or not isinstance(aggregate, bool):
        raise ConfigError("wt.aggregated and wt.aggregate must be booleans")
    if aggregated and aggregate:
        raise AggregationError("inconsistent aggregation flags: wt.aggregated = true "
                               "(values already aggregated) and wt.aggregate = true")
    n = _number("wt", d, "n_turbines", 1, integer=True)
    if n < 1:
        raise ConfigError(f"n_turbines >= 1 (got wt.n_turbines = {n})")
    try:
        p = WtParams(kp=kp * vb, ki=ki * vb,
                     r_lg=_number("wt", d, "r_lg") / zb, l_g=_number("wt", d, "l_g") / zb,
                     id_c=_number("wt", d, "id_c", 1.0), iq_c=_number("wt", d, "iq_c", 0.0),
                     i_max=_number("wt", d, "i_max", 1.1),
                     k_factor=_number("wt", d, "k_factor", 2.0),
                     id_ramp=_number("wt", d, "id_ramp", 2.0 * ib) / ib,
                     n_turbines=n, x2_max=_number("wt", d, "x2_max", 2 * math.pi * 5),
                     aggregated=aggregated)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    if aggregate:
        p = aggregate_scaling(p)
    res.update(units=u, id_c=p.id_c / p.unit_count, iq_c=p.iq_c / p.unit_count,
               i_max=p.i_max / p.unit_count, k_factor=p.k_factor, n_turbines=n,
               x2_max=p.x2_max, aggregated=aggregated, aggregate=aggregate,
               id_ramp=_number("wt", d, "id_ramp", 2.0 * ib))
    if aggregated:
        res.update(id_c=p.id_c, iq_c=p.iq_c, i_max=p.i_max)
    return p, res


def _load_statcom(d, base: BaseValues):
    if d is None:
        raise ConfigError("statcom section is required")
    _unknown("statcom", d, _ST_FIELDS)
    u = _units("statcom", d)
    vb, zb = (base.v_base, base.z_base) if u == "si" else (1.0, 1.0)
    kp = _positive("statcom", "kp", _number("statcom", d, "kp"))
    ki = _positive("statcom", "ki", _number("statcom", d, "ki"))
    try:
        p = StatcomParams(kp=kp * vb, ki=ki * vb, r_ls=_number("statcom", d, "r_ls") / zb,
                          l_s=_number("statcom", d, "l_s") / zb,
                          iq_st=_number("statcom", d, "iq_st", 1.0),
                          iq_fault=_number("statcom", d, "iq_fault", 1.0),
                          y2_max=_number("statcom", d, "y2_max", 2 * math.pi * 5))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    res = dict(d)
    res.update(units=u, iq_st=p.iq_st, iq_fault=p.iq_fault, y2_max=p.y2_max)
    return p, res


def _pair(sec, d, key, default):
    v = d.get(key, default)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v, v]
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(a, (int, float)) for a in v)):
        raise ConfigError(f"{sec}.{key} must be a number or a pair of numbers")
    return tuple(float(a) for a in v)


def _load_grid(d, base: BaseValues):
    _unknown("grid", d, _GRID_FIELDS)
    try:
        g = GridBoundary(v_mag_0=_pair("grid", d, "v_mag_0", [1.0, 1.0]),
                         theta_g0=_pair("grid", d, "theta_g0", [0.0, 0.0]),
                         omega_0=_number("grid", d, "omega_0", base.omega),
                         v_dot=_number("grid", d, "v_dot", 0.0),
                         omega_dot=_number("grid", d, "omega_dot", 0.0))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    res = {"v_mag_0": list(g.v_mag_0), "theta_g0": list(g.theta_g0), "omega_0": g.omega_0,
           "v_dot": g.v_dot, "omega_dot": g.omega_dot}
    return g, res


def _fit_from_scan(d: dict, base_dir: Path) -> dict:
    """Replace a ``scan_file`` network section by its fitted RL equivalent (SI)."""
    from tlroa.netfit import FitWindow, fit_rl, read_scan_csv

    _unknown("network", d, {"scan_file", "window", "units"})
    if d.get("units", "si") != "si":
        raise ConfigError("network.units must be 'si' for an impedance scan")
    path = Path(d["scan_file"])
    path = path if path.is_absolute() else base_dir / path
    w = d.get("window", {})
    _unknown("network.window", w, {"f_center", "half_width", "f_corner"})
    try:
        window = FitWindow(**w)
        net = fit_rl(read_scan_csv(path), window)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"network.scan_file: {exc}") from exc
    return fitted_network_dict(net, path, window)


def fitted_network_dict(net: NetworkCoupling, scan_path, window) -> dict:
    data = Path(scan_path).read_bytes()
    return {"units": "si", "r": net.r.tolist(), "l": net.l.tolist(),
            "fit": {"scan_file": Path(scan_path).name,
                    "scan_sha256": hashlib.sha256(data).hexdigest(),
                    "f_center": window.f_center, "half_width": window.half_width,
                    "f_corner": window.f_corner}}


def _load_network(d, base: BaseValues, base_dir: Path = Path(".")):
    if not isinstance(d, dict):
        raise ConfigError("network must be an object with r and l")
    if "scan_file" in d:
        d = _fit_from_scan(d, base_dir)
    _unknown("network", d, {"r", "l", "units", "fit"})
    u = _units("network", d)
    for key in ("r", "l"):
        if key not in d:
            raise ConfigError(f"network.{key} is required (2x2 matrix)")
    try:
        net = NetworkCoupling(r=np.asarray(d["r"], dtype=float), l=np.asarray(d["l"], dtype=float))
    except (ParameterError, ValueError) as exc:
        raise ConfigError(f"network: {exc}") from exc
    pu = base.network_to_pu(net) if u == "si" else net
    res = {"units": u, "r": net.r.tolist(), "l": net.l.tolist()}
    if "fit" in d:
        res["fit"] = d["fit"]
    return pu, res


def _load_schedule(d, base: BaseValues, wt: WtParams):
    _unknown("schedule", d, _SCHED_FIELDS)
    u = _units("schedule", d)
    ramp = d.get("post_fault_ramp")
    ramp_pu = None
    if ramp is not None:
        ramp = _number("schedule", d, "post_fault_ramp")
        if ramp < 0:
            raise ConfigError(f"post_fault_ramp >= 0 (got schedule.post_fault_ramp = {ramp})")
        # a plant-level ramp: per turbine in the config, folded like the WT ramp
        ramp_pu = (ramp / base.i_base if u == "si" else ramp) * wt.unit_count
    frt = d.get("frt", True)
    if not isinstance(frt, bool):
        raise ConfigError("schedule.frt must be a boolean")
    try:
        sc = FaultScenario(t_on=_number("schedule", d, "t_on", 0.0),
                           duration_max=_number("schedule", d, "duration_max", 1.2),
                           v_fault=_number("schedule", d, "v_fault", 0.01),
                           post_fault_ramp=ramp_pu, frt=frt,
                           fault_type=d.get("fault_type", "bolted-3ph-at-connection-point"))
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    res = {"units": u, "t_on": sc.t_on, "duration_max": sc.duration_max, "v_fault": sc.v_fault,
           "post_fault_ramp": ramp, "frt": frt, "fault_type": sc.fault_type}
    return sc, res
