"""Two-port impedance scans of the collector network and their RL equivalent.

The PLL only sees the network within a few hertz of the fundamental, so each
port pair is reduced to a series resistance (real part at the corner
frequency) and an inductance (slope of the reactance over the fit window).
Scans and fitted values are in ohms / henries; conversion to per unit happens
when a configuration is loaded.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tlroa.model import NetworkCoupling

CSV_COLUMNS = ("f_hz", "re_z11", "im_z11", "re_z12", "im_z12",
               "re_z21", "im_z21", "re_z22", "im_z22")


class FitRangeError(ValueError):
    """The fit window is not covered by the scan."""


class FitQualityError(ValueError):
    """The fitted equivalent is physically implausible (negative self inductance)."""


@dataclass(frozen=True, eq=False)
class ImpedanceScan:
    """``z[k]`` is the 2x2 complex impedance matrix at ``frequencies[k]`` (Hz, ohm)."""

    frequencies: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        z = np.asarray(self.z, dtype=complex)
        if f.ndim != 1 or z.shape != (f.size, 2, 2):
            raise ValueError(f"z must have shape ({f.size}, 2, 2), got {z.shape}")
        if f.size < 2 or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly ascending with at least 2 samples")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(z))):
            raise ValueError("scan contains non-finite values")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "z", z)

    @property
    def is_reciprocal(self) -> bool:
        return bool(np.array_equal(self.z[:, 0, 1], self.z[:, 1, 0]))


@dataclass(frozen=True)
class FitWindow:
    f_center: float = 50.0
    half_width: float = 5.0
    f_corner: float | None = None

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"half_width > 0 required (got {self.half_width})")
        if self.f_corner is None:
            object.__setattr__(self, "f_corner", float(self.f_center))

    @property
    def bounds(self) -> tuple:
        return self.f_center - self.half_width, self.f_center + self.half_width


def fit_rl(scan: ImpedanceScan, window: FitWindow = FitWindow()) -> NetworkCoupling:
    """RL equivalent of every port pair: r = Re Z(F_C), L = slope(Im Z vs f) / 2pi."""
    f = scan.frequencies
    lo, hi = window.bounds
    if lo < f[0] or hi > f[-1]:
        raise FitRangeError(f"fit window [{lo}, {hi}] Hz outside scan range [{f[0]}, {f[-1]}] Hz")
    if not f[0] <= window.f_corner <= f[-1]:
        raise FitRangeError(f"corner frequency {window.f_corner} Hz outside scan range")
    sel = (f >= lo) & (f <= hi)
    if sel.sum() < 2:
        raise FitRangeError(f"fewer than 2 scan samples inside [{lo}, {hi}] Hz")
    fw = f[sel]
    r = np.empty((2, 2))
    ell = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            zij = scan.z[:, i, j]
            r[i, j] = np.interp(window.f_corner, f, zij.real)
            ell[i, j] = _ls_slope(fw, zij.imag[sel]) / (2 * math.pi)
    if scan.is_reciprocal:
        # identical data gives identical fits; make the symmetry exact
        r[1, 0], ell[1, 0] = r[0, 1], ell[0, 1]
    for k in range(2):
        if ell[k, k] <= 0:
            raise FitQualityError(f"fitted self inductance L{k + 1}{k + 1} = {ell[k, k]:.3e} H "
                                  "is not positive")
    return NetworkCoupling(r=r, l=ell)


def _ls_slope(x, y) -> float:
    """Least-squares slope of y against x (centred to keep it well conditioned)."""
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


@dataclass(frozen=True)
class RadialBranches:
    """Two feeder branches joined at a common grid impedance (ohm, henry, farad).

    ``c_shunt`` is an optional capacitance from each bus to ground (cable
    charging), which makes the scan deviate from a pure RL response.
    """

    r1: float
    l1: float
    r2: float
    l2: float
    rg: float
    lg: float
    c_shunt: float = 0.0

    def __post_init__(self):
        for name in ("r1", "l1", "r2", "l2", "rg", "lg", "c_shunt"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} >= 0 required (got {getattr(self, name)})")


def synthesize_scan(branches: RadialBranches, frequencies, topology: str = "radial-2port") -> ImpedanceScan:
    """Analytic open-circuit impedance matrix of the radial two-port network.

    Without shunt capacitance this is the star result Z11 = Z1 + Zg,
    Z22 = Z2 + Zg, Z12 = Z21 = Zg. With shunts the nodal admittance matrix of
    (bus 1, bus 2, junction) is inverted at each frequency.
    """
    if topology != "radial-2port":
        raise ValueError(f"unsupported topology {topology!r}")
    f = np.asarray(frequencies, dtype=float)
    s = 2j * np.pi * f
    b = branches
    z1 = b.r1 + s * b.l1
    z2 = b.r2 + s * b.l2
    zg = b.rg + s * b.lg
    z = np.empty((f.size, 2, 2), dtype=complex)
    if b.c_shunt == 0.0:
        z[:, 0, 0] = z1 + zg
        z[:, 1, 1] = z2 + zg
        z[:, 0, 1] = zg
        z[:, 1, 0] = zg
        return ImpedanceScan(f, z)
    for k in range(f.size):
        y1, y2, yg, yc = 1 / z1[k], 1 / z2[k], 1 / zg[k], s[k] * b.c_shunt
        ybus = np.array([[y1 + yc, 0, -y1],
                         [0, y2 + yc, -y2],
                         [-y1, -y2, y1 + y2 + yg]])
        z[k] = np.linalg.inv(ybus)[:2, :2]
    return ImpedanceScan(f, z)


def read_scan_csv(path) -> ImpedanceScan:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing scan columns {sorted(missing)}")
        rows = [[float(row[c]) for c in CSV_COLUMNS] for row in reader]
    a = np.asarray(rows, dtype=float)
    if a.size == 0:
        raise ValueError(f"{path}: empty scan")
    z = np.empty((a.shape[0], 2, 2), dtype=complex)
    z[:, 0, 0] = a[:, 1] + 1j * a[:, 2]
    z[:, 0, 1] = a[:, 3] + 1j * a[:, 4]
    z[:, 1, 0] = a[:, 5] + 1j * a[:, 6]
    z[:, 1, 1] = a[:, 7] + 1j * a[:, 8]
    return ImpedanceScan(a[:, 0], z)


def write_scan_csv(scan: ImpedanceScan, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for f, z in zip(scan.frequencies, scan.z):
            w.writerow([repr(float(v)) for v in (f, z[0, 0].real, z[0, 0].imag, z[0, 1].real,
                                                 z[0, 1].imag, z[1, 0].real, z[1, 0].imag,
                                                 z[1, 1].real, z[1, 1].imag)])
    return path
