"""Time-limited region of attraction (TLRoA) by reverse-time integration.

Boundary samples of the initial Lyapunov ellipsoid are integrated backwards
for a horizon T; every endpoint reaches the ellipsoid again within T under the
forward flow, so the endpoint cloud outlines the set of states that return to
the operating point within T. Membership of an arbitrary state is decided by
forward simulation, never by testing points against the cloud.

Angles live on a circle: by default membership treats the operating point and
all its 2*pi copies as the same target (the ellipsoid is centred on every
copy), which is what lets a PLL that slipped a cycle count as resynchronised.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from tlroa import _core
from tlroa.loadflow import Equilibrium
from tlroa.lyapunov import Ellipsoid, linearize, sample_boundary
from tlroa.model import InjectionSchedule, PlantConfig, PlantRhs, SystemState, saturate

ESCAPE_DEFAULT = 1e3
DT_DEFAULT = 1e-4
HORIZON_DEFAULT = 2.25
# relative slack on the level when deciding whether a state is in the ellipsoid
LEVEL_RTOL = 1e-6
WORKERS_ENV = "TLROA_WORKERS"

AXIS_NAMES = ("x1", "x2", "x3", "y1", "y2", "y3")


def configure_workers(n: int | None = None) -> int:
    """Set the number of integration threads (default: env ``TLROA_WORKERS``)."""
    import numba

    if n is None:
        env = os.environ.get(WORKERS_ENV)
        if not env:
            return numba.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def _steps(duration: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt > 0 required (got {dt})")
    if duration < 0:
        raise ValueError(f"duration >= 0 required (got {duration})")
    n = int(round(duration / dt))
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} is not a multiple of dt {dt}")
    return n


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States (x1, x3, y1, y3) at physical ``times`` (descending for reverse runs)."""

    times: np.ndarray
    states: np.ndarray
    direction: str = "forward"
    terminated_early: bool = False
    reason: str = ""

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"direction must be 'forward' or 'reverse' (got {self.direction!r})")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def state(self, k: int) -> SystemState:
        return SystemState.from_array(self.states[k])

    def with_saturation(self, config: PlantConfig) -> np.ndarray:
        """Columns (x1, x2, x3, y1, y2, y3)."""
        return expand_states(self.states, config)


def expand_states(x, config: PlantConfig) -> np.ndarray:
    """Append the saturated frequencies: (x1, x3, y1, y3) -> (x1, x2, x3, y1, y2, y3)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x2 = saturate(x[:, 1], config.wt.x2_max)
    y2 = saturate(x[:, 3], config.statcom.y2_max)
    return np.column_stack([x[:, 0], x2, x[:, 1], x[:, 2], y2, x[:, 3]])


def _as_array(x0) -> np.ndarray:
    return x0.as_array() if isinstance(x0, SystemState) else np.asarray(x0, dtype=float)


def integrate(rhs, x0, t_span, dt: float = DT_DEFAULT, direction: str = "forward",
              escape: float = ESCAPE_DEFAULT, center=None) -> Trajectory:
    """Fixed-step classical RK4 from ``t_span[0]`` over ``t_span[1] - t_span[0]`` seconds.

    ``rhs(t, x)`` is the forward vector field. ``direction='reverse'``
    integrates x' = -f, i.e. physical time runs backwards from ``t_span[0]``.
    Integration stops early (flagged) when any component of ``x - center``
    exceeds ``escape`` or the state turns non-finite. A :class:`PlantRhs`
    takes the compiled path; any other callable runs in numpy.
    """
    if direction not in ("forward", "reverse"):
        raise ValueError(f"direction must be 'forward' or 'reverse' (got {direction!r})")
    t0 = float(t_span[0])
    n = _steps(float(t_span[1]) - t0, dt)
    x = _as_array(x0).copy()
    center = np.zeros_like(x) if center is None else np.asarray(center, dtype=float)
    sign = 1.0 if direction == "forward" else -1.0
    h = sign * dt
    if isinstance(rhs, PlantRhs):
        sign *= rhs.direction
        xf, esc, _, saved = _core.rk4_batch(
            x[None, :], t0, dt, np.array([n]), sign, rhs.p, rhs.sv,
            *rhs.timing(1), center, escape, 1, np.eye(4), 0.0, False, False, False)
        states = saved[0]
        stop = int(esc[0])
        if stop >= 0:
            states = states[:stop + 1]
            bad = not np.all(np.isfinite(states[-1]))
            reason = (f"non-finite state at step {stop}" if bad
                      else f"escape bound {escape:g} exceeded at step {stop}")
            if bad:
                states = states[:-1]
            times = t0 + h * np.arange(len(states))
            return Trajectory(times, states, direction, True, reason)
        return Trajectory(t0 + h * np.arange(n + 1), states, direction)
    states = np.empty((n + 1, x.size))
    states[0] = x
    for k in range(n):
        t = t0 + h * k
        k1 = np.asarray(rhs(t, x))
        k2 = np.asarray(rhs(t + 0.5 * h, x + 0.5 * h * k1))
        k3 = np.asarray(rhs(t + 0.5 * h, x + 0.5 * h * k2))
        k4 = np.asarray(rhs(t + h, x + h * k3))
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return Trajectory(t0 + h * np.arange(k + 1), states[:k + 1], direction, True,
                              f"non-finite state at step {k + 1}")
        states[k + 1] = x
        if np.any(np.abs(x - center) > escape):
            return Trajectory(t0 + h * np.arange(k + 2), states[:k + 2], direction, True,
                              f"escape bound {escape:g} exceeded at step {k + 1}")
    return Trajectory(t0 + h * np.arange(n + 1), states, direction)


@dataclass(frozen=True, eq=False)
class BatchResult:
    final: np.ndarray
    escaped_step: np.ndarray
    enter_step: np.ndarray
    saved: np.ndarray

    @property
    def escaped(self) -> np.ndarray:
        return self.escaped_step >= 0


def integrate_batch(rhs: PlantRhs, x0, t0: float, duration, dt: float = DT_DEFAULT,
                    direction: str = "forward", escape: float = ESCAPE_DEFAULT, center=None,
                    t_clear=None, save_every: int = 0, ellipsoid: Ellipsoid | None = None,
                    stop_on_enter: bool = False, wrap: bool = True) -> BatchResult:
    """Integrate many initial states of the plant at once.

    ``duration`` may be a scalar or one value per row; ``t_clear`` overrides
    the schedule's clearing time per row. With ``ellipsoid`` the first step at
    which a row lies in it (shifted by ``center``) is recorded.
    """
    x0 = np.ascontiguousarray(np.atleast_2d(np.asarray(x0, dtype=float)))
    n = x0.shape[0]
    dur = np.broadcast_to(np.asarray(duration, dtype=float), (n,))
    nsteps = np.array([_steps(d, dt) for d in dur], dtype=np.int64)
    center = np.zeros(4) if center is None else np.asarray(center, dtype=float)
    sign = (1.0 if direction == "forward" else -1.0) * rhs.direction
    t_on, tc = rhs.timing(n, t_clear)
    if ellipsoid is not None:
        pm, level, track = ellipsoid.p, ellipsoid.level * (1 + LEVEL_RTOL), True
        center = center + ellipsoid.center
    else:
        pm, level, track = np.eye(4), 0.0, False
    xf, esc, ent, saved = _core.rk4_batch(x0, float(t0), float(dt), nsteps, sign, rhs.p, rhs.sv,
                                          t_on, tc, center, float(escape), int(save_every),
                                          np.ascontiguousarray(pm), level, track, stop_on_enter,
                                          bool(wrap))
    return BatchResult(xf, esc, ent, saved)


@dataclass(frozen=True, eq=False)
class TlRoa:
    """Reverse-time endpoint cloud; all coordinates shifted to the operating point."""

    horizon: float
    boundary_cloud: np.ndarray
    seeds: np.ndarray
    seed_index: np.ndarray
    seed_ellipsoid: Ellipsoid
    equilibrium: Equilibrium
    config: PlantConfig
    dt: float = DT_DEFAULT
    escaped_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tubes: np.ndarray | None = None
    consistency: dict = field(default_factory=dict)
    linear: bool = False

    @property
    def n_points(self) -> int:
        return len(self.boundary_cloud)

    def absolute_cloud(self) -> np.ndarray:
        return self.boundary_cloud + self.equilibrium.state


def _linear_reverse(a: np.ndarray, seeds: np.ndarray, nsteps: int, dt: float):
    """RK4 on x' = -A x, applied as its exact one-step matrix."""
    m = -dt * a
    step = np.eye(4) + m + m @ m / 2 + m @ m @ m / 6 + m @ m @ m @ m / 24
    x = seeds.copy()
    for _ in range(nsteps):
        x = x @ step.T
    return x


def build_tlroa(config: PlantConfig, eq: Equilibrium, e: Ellipsoid,
                horizon: float = HORIZON_DEFAULT, n_samples: int = 4096,
                dt: float = DT_DEFAULT, strategy: str = "fibonacci", seed: int = 0,
                linear: bool = False, keep_tubes: bool = False, tube_every: int = 100,
                escape: float = ESCAPE_DEFAULT, check_fraction: float = 0.05) -> TlRoa:
    """Reverse-integrate ``n_samples`` ellipsoid boundary points for ``horizon`` seconds.

    ``linear=True`` replaces the plant by its linearisation x' = A x. Seeds
    that escape are excluded with a warning. A random ``check_fraction`` of
    the endpoints is integrated forward again and must land in the ellipsoid.
    """
    seeds = sample_boundary(e, n_samples, strategy, seed)
    nsteps = _steps(horizon, dt)
    rng = np.random.default_rng(seed)
    if linear:
        a = linearize(config, eq).a_full
        cloud = _linear_reverse(a, seeds, nsteps, dt)
        return TlRoa(horizon, cloud, seeds, np.arange(n_samples), e, eq, config, dt,
                     linear=True)
    rhs = PlantRhs(config, InjectionSchedule.normal())
    res = integrate_batch(rhs, seeds + eq.state, 0.0, horizon, dt, "reverse", escape,
                          center=eq.state, save_every=tube_every if keep_tubes else 0)
    ok = ~res.escaped
    escaped_index = np.flatnonzero(~ok)
    if escaped_index.size:
        warnings.warn(f"{escaped_index.size} of {n_samples} reverse trajectories escaped and "
                      "were excluded; the seed level set may touch the true RoA boundary",
                      RuntimeWarning, stacklevel=2)
    cloud = res.final[ok] - eq.state
    tubes = res.saved[ok] - eq.state if keep_tubes else None
    roa = TlRoa(horizon, cloud, seeds[ok], np.flatnonzero(ok), e, eq, config, dt,
                escaped_index, tubes)
    if check_fraction > 0 and len(cloud):
        k = max(1, int(math.ceil(check_fraction * len(cloud))))
        pick = np.sort(rng.choice(len(cloud), size=k, replace=False))
        back = integrate_batch(rhs, roa.absolute_cloud()[pick], -horizon, horizon, dt,
                               "forward", escape, center=eq.state)
        v = e.value(back.final - eq.state)
        passed = v <= e.level * (1 + LEVEL_RTOL)
        roa.consistency.update(checked=pick.tolist(), max_ratio=float(np.max(v / e.level)),
                               passed=bool(np.all(passed)))
        if not np.all(passed):
            warnings.warn(f"forward-consistency check failed for {int(np.sum(~passed))} of {k} "
                          "endpoints", RuntimeWarning, stacklevel=2)
    return roa


@dataclass(frozen=True, eq=False)
class Membership:
    inside: np.ndarray
    time: np.ndarray          # first time in the seed ellipsoid (nan when outside)
    escaped: np.ndarray

    def __len__(self):
        return len(self.inside)


def is_member(x, roa: TlRoa, schedule: InjectionSchedule | None = None, t0: float = 0.0,
              absolute: bool = False, wrap: bool = True, escape: float = ESCAPE_DEFAULT,
              horizon: float | None = None) -> Membership:
    """Forward-simulate each state for the TLRoA horizon and test ellipsoid entry.

    ``x`` is one state or an (n, 4) batch, shifted to the operating point
    unless ``absolute``. ``schedule`` and ``t0`` select the dynamics (default:
    normal operation); e.g. post-fault membership uses a schedule cleared at
    ``t0``. Inside iff V(x(t)) <= level for some t <= T.
    """
    eq = roa.equilibrium
    xa = np.atleast_2d(_as_array(x))
    if not absolute:
        xa = xa + eq.state
    if wrap:
        xa = wrap_angles(xa, eq.state)
    rhs = PlantRhs(roa.config, schedule or InjectionSchedule.normal())
    horizon = roa.horizon if horizon is None else horizon
    res = integrate_batch(rhs, xa, t0, horizon, roa.dt, "forward", escape, center=eq.state,
                          ellipsoid=roa.seed_ellipsoid, stop_on_enter=True, wrap=wrap)
    inside = res.enter_step >= 0
    time = np.where(inside, res.enter_step * roa.dt, np.nan)
    return Membership(inside, time, res.escaped & ~inside)


def wrap_angles(x, center) -> np.ndarray:
    """Move x1, y1 by multiples of 2*pi to within pi of the centre's angles."""
    x = np.array(x, dtype=float, copy=True)
    two_pi = 2 * np.pi
    for j in (0, 2):
        x[..., j] -= two_pi * np.floor((x[..., j] - center[j]) / two_pi + 0.5)
    return x


@dataclass(frozen=True)
class Hyperplane:
    normal: tuple
    intercept: float
    thickness: float = 0.05

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.ndim != 1 or not np.linalg.norm(n) > 0:
            raise ValueError("hyperplane normal must be a non-zero vector")
        if not self.thickness > 0:
            raise ValueError(f"thickness > 0 required (got {self.thickness})")
        object.__setattr__(self, "normal", tuple(float(v) for v in n))

    def distance(self, points) -> np.ndarray:
        n = np.asarray(self.normal)
        return (np.atleast_2d(points) @ n - self.intercept) / np.linalg.norm(n)


def slice(cloud, h: Hyperplane) -> np.ndarray:  # noqa: A001 - mirrors the CLI verb
    """Points of ``cloud`` whose distance to the hyperplane is at most its thickness."""
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.shape[1] != len(h.normal):
        raise ValueError(f"cloud dimension {cloud.shape[1]} != normal dimension {len(h.normal)}")
    return cloud[np.abs(h.distance(cloud)) <= h.thickness]


def project(points, axes=("x1", "x2"), config: PlantConfig | None = None,
            names=("x1", "x3", "y1", "y3")) -> np.ndarray:
    """Coordinate projection onto two named axes.

    ``points`` columns are named by ``names`` (default the integrator state).
    ``x2``/``y2`` are derived from ``x3``/``y3`` through the saturation, which
    needs ``config``.
    """
    a, b = axes
    if a == b:
        raise ValueError("projection axes must be distinct")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    names = tuple(names)
    cols = {nm: points[:, i] for i, nm in enumerate(names)}

    def column(name):
        if name in cols:
            return cols[name]
        if name in ("x2", "y2") and config is not None:
            src = "x3" if name == "x2" else "y3"
            lim = config.wt.x2_max if name == "x2" else config.statcom.y2_max
            if src in cols:
                return saturate(cols[src], lim)
        raise ValueError(f"axis {name!r} not available (columns {names})")

    return np.column_stack([column(a), column(b)])


def plane_coordinates(points, normal) -> np.ndarray:
    """Orthogonal 2-D coordinates of 3-D points within the plane with ``normal``."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    # orthonormal in-plane basis from the null space of n
    _, _, vt = np.linalg.svd(n[None, :])
    basis = vt[1:3]
    return np.atleast_2d(points) @ basis.T


def count_holes(points2d, cell: float) -> int:
    """Number of bounded empty regions in a raster of 2-D points.

    Cells of size ``cell`` containing no point form the empty set; connected
    empty components that do not touch the raster border are holes.
    """
    from scipy import ndimage

    p = np.atleast_2d(points2d)
    lo = p.min(axis=0) - 2 * cell
    idx = np.floor((p - lo) / cell).astype(int)
    shape = idx.max(axis=0) + 3
    occ = np.zeros(shape, dtype=bool)
    occ[idx[:, 0], idx[:, 1]] = True
    labels, n = ndimage.label(~occ)
    border = set(np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])))
    return sum(1 for k in range(1, n + 1) if k not in border)


def cup_fixture(n: int = 60000, inner_radius: float = 0.3, outer_radius: float = 0.4,
                height: float = 1.0, base: float = 0.1, axis=(1.0, 1.0, 1.0),
                seed: int = 0) -> np.ndarray:
    """Uniform points filling a 3-D cup: a hollow cylinder on a solid base.

    The cup's axis is ``axis`` (through the origin, base at the origin).
    """
    rng = np.random.default_rng(seed)
    u = np.asarray(axis, dtype=float)
    u = u / np.linalg.norm(u)
    _, _, vt = np.linalg.svd(u[None, :])
    e1, e2 = vt[1], vt[2]
    wall_vol = math.pi * (outer_radius ** 2 - inner_radius ** 2) * (height - base)
    base_vol = math.pi * outer_radius ** 2 * base
    n_base = int(round(n * base_vol / (wall_vol + base_vol)))
    n_wall = n - n_base
    r_wall = np.sqrt(rng.uniform(inner_radius ** 2, outer_radius ** 2, n_wall))
    s_wall = rng.uniform(base, height, n_wall)
    r_base = outer_radius * np.sqrt(rng.uniform(0, 1, n_base))
    s_base = rng.uniform(0, base, n_base)
    r = np.concatenate([r_base, r_wall])
    s = np.concatenate([s_base, s_wall])
    phi = rng.uniform(0, 2 * math.pi, n)
    return (s[:, None] * u + (r * np.cos(phi))[:, None] * e1 + (r * np.sin(phi))[:, None] * e2)
