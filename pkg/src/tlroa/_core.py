"""Compiled per-point physics and the batched RK4 kernel.

Everything here works on plain floats and flat parameter vectors so numba can
compile it. The public, dataclass-facing API lives in :mod:`tlroa.model`.

State ordering is ``(x1, x3, y1, y3)``: WT PLL angle, WT unsaturated frequency
deviation, STATCOM PLL angle, STATCOM unsaturated frequency deviation.
"""

import numpy as np
import numba
from numba import njit, prange

# prefer OpenMP / the built-in work queue over probing an (often outdated) TBB
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# plant parameter vector layout
P_KP_W, P_KI_W, P_R_T, P_L_T, P_X2MAX = 0, 1, 2, 3, 4
P_KP_S, P_KI_S, P_R_S, P_L_S, P_Y2MAX = 5, 6, 7, 8, 9
P_W0, P_V1, P_TH1, P_V2, P_TH2, P_VDOT, P_WDOT = 10, 11, 12, 13, 14, 15, 16
P_R11, P_R12, P_R21, P_R22 = 17, 18, 19, 20
P_L11, P_L12, P_L21, P_L22 = 21, 22, 23, 24
# cached rectangular form of the open-circuit voltages
P_V1RE, P_V1IM, P_V2RE, P_V2IM = 25, 26, 27, 28
# cached reciprocals of the saturation limits
P_IX2MAX, P_IY2MAX = 29, 30
N_PLANT = 31

# schedule vector layout
S_ID_C, S_IQ_C, S_ID_F, S_IQ_F, S_IQST_N, S_IQST_F, S_VFAULT, S_RAMP = range(8)
N_SCHED = 8

# below this rotation the sin/cos update uses a Taylor polynomial
_TAYLOR_EPS = 1e-2
TWO_PI = 2.0 * np.pi


@njit(cache=True, error_model="numpy")
def injections(t, t_on, t_clear, sv):
    """Return (id, iq, did, diq, iq_st, v_scale) at time ``t``."""
    if t < t_on:
        return sv[S_ID_C], sv[S_IQ_C], 0.0, 0.0, sv[S_IQST_N], 1.0
    if t < t_clear:
        return sv[S_ID_F], sv[S_IQ_F], 0.0, 0.0, sv[S_IQST_F], sv[S_VFAULT]
    gap = sv[S_ID_C] - sv[S_ID_F]
    ramp = sv[S_RAMP]
    tau = t - t_clear
    if gap != 0.0 and ramp > 0.0 and tau < abs(gap) / ramp:
        step = ramp if gap > 0.0 else -ramp
        return sv[S_ID_F] + step * tau, sv[S_IQ_C], step, 0.0, sv[S_IQST_N], 1.0
    return sv[S_ID_C], sv[S_IQ_C], 0.0, 0.0, sv[S_IQST_N], 1.0


@njit(cache=True, error_model="numpy")
def open_circuit(t, p, v_scale):
    """Open-circuit (Thevenin) voltages of both buses at time ``t``."""
    if p[P_VDOT] == 0.0 and p[P_WDOT] == 0.0:
        return (v_scale * (p[P_V1RE] + 1j * p[P_V1IM]),
                v_scale * (p[P_V2RE] + 1j * p[P_V2IM]))
    th_shift = 0.5 * p[P_WDOT] * t * t
    v1 = (p[P_V1] + p[P_VDOT] * t) * v_scale
    v2 = (p[P_V2] + p[P_VDOT] * t) * v_scale
    return (v1 * np.exp(1j * (p[P_TH1] + th_shift)),
            v2 * np.exp(1j * (p[P_TH2] + th_shift)))


@njit(cache=True, error_model="numpy")
def bus_voltages(e1, x2, e2, y2, i1, di1, i2, di2, v01, v02, p):
    """Collector-network bus voltages in the system frame.

    ``e1``/``e2`` are the unit phasors exp(j x1), exp(j y1); ``i*``/``di*`` are
    converter-frame currents and their time derivatives as complex d + jq.
    """
    w0 = p[P_W0]
    i1s = e1 * i1
    i2s = e2 * i2
    # d/dt of the rotated currents: rotation-rate term plus di/dt term
    di1s = e1 * (1j * x2 * i1 + di1)
    di2s = e2 * (1j * y2 * i2 + di2)
    v1 = (v01 + (p[P_R11] + 1j * w0 * p[P_L11]) * i1s + p[P_L11] * di1s
          + (p[P_R12] + 1j * w0 * p[P_L12]) * i2s + p[P_L12] * di2s)
    v2 = (v02 + (p[P_R21] + 1j * w0 * p[P_L21]) * i1s + p[P_L21] * di1s
          + (p[P_R22] + 1j * w0 * p[P_L22]) * i2s + p[P_L22] * di2s)
    return v1, v2


@njit(cache=True, error_model="numpy")
def pll_accel(e, w, vb, kp, ki, r, ell, id_, iq, did, diq, w0, vdot, wdot):
    """d/dt of the unsaturated PLL frequency for one converter.

    ``e`` is exp(j angle), ``w`` the saturated frequency, ``vb`` the bus voltage
    (system frame). The STATCOM is the same law with zero active current.
    """
    u = vb * np.conj(e)           # bus voltage in the converter frame
    sin_d = 0.0
    if vdot != 0.0:
        vmag = abs(u)
        if vmag > 0.0:
            sin_d = -u.imag / vmag
    m = 1.0 - kp * ell * id_
    # scheduled currents are piecewise linear, so second derivatives vanish
    tm = kp * (r * diq + ell * did * w0) + ki * (r * iq + ell * diq + ell * id_ * w0)
    te = ki * (-u.imag) + kp * vdot * sin_d + m * wdot
    d = kp * (u.real - ell * did) - ki * ell * id_
    return (tm - te - d * w) / m


@njit(cache=True, error_model="numpy")
def _tanh(z):
    """tanh through a single exp; about twice as fast as libm's tanh here.

    The absolute error is at round-off level and |result| <= 1 always holds,
    which is all the saturation needs.
    """
    e = np.exp(-2.0 * abs(z))
    r = (1.0 - e) / (1.0 + e)
    return r if z >= 0.0 else -r


@njit(cache=True, error_model="numpy")
def _accel(ure, uim, w, kp, ki, r, ell, id_, iq, did, diq, w0, vdot, wdot):
    """Real-arithmetic form of :func:`pll_accel` given the frame voltage u."""
    sin_d = 0.0
    if vdot != 0.0:
        vmag = np.sqrt(ure * ure + uim * uim)
        if vmag > 0.0:
            sin_d = -uim / vmag
    m = 1.0 - kp * ell * id_
    tm = kp * (r * diq + ell * did * w0) + ki * (r * iq + ell * diq + ell * id_ * w0)
    te = -ki * uim + kp * vdot * sin_d + m * wdot
    d = kp * (ure - ell * did) - ki * ell * id_
    return (tm - te - d * w) / m


@njit(cache=True, error_model="numpy")
def rhs_trig(t, c1, s1, x3, c2, s2, y3, p, sv, t_on, t_clear):
    """Forward right-hand side given the angle phasors instead of angles.

    Same physics as :func:`bus_voltages` + :func:`pll_accel`, but the bus
    voltages are formed directly in each converter frame in real arithmetic,
    which is what the integrator spends its time on.
    """
    x2 = p[P_X2MAX] * _tanh(x3 * p[P_IX2MAX])
    y2 = p[P_Y2MAX] * _tanh(y3 * p[P_IY2MAX])
    id_, iq, did, diq, iq_st, v_scale = injections(t, t_on, t_clear, sv)
    if p[P_VDOT] == 0.0 and p[P_WDOT] == 0.0:
        v1r, v1i = v_scale * p[P_V1RE], v_scale * p[P_V1IM]
        v2r, v2i = v_scale * p[P_V2RE], v_scale * p[P_V2IM]
    else:
        v01, v02 = open_circuit(t, p, v_scale)
        v1r, v1i, v2r, v2i = v01.real, v01.imag, v02.real, v02.imag
    w0 = p[P_W0]
    # exp(j(y1 - x1))
    rr = c2 * c1 + s2 * s1
    ri = s2 * c1 - c2 * s1
    # self terms (Z + j L w) i + L di, in the own frame
    xs1 = p[P_L11] * (w0 + x2)
    u1r = v1r * c1 + v1i * s1 + p[P_R11] * id_ - xs1 * iq + p[P_L11] * did
    u1i = v1i * c1 - v1r * s1 + p[P_R11] * iq + xs1 * id_ + p[P_L11] * diq
    xs2 = p[P_L22] * (w0 + y2)
    u2r = v2r * c2 + v2i * s2 - xs2 * iq_st
    u2i = v2i * c2 - v2r * s2 + p[P_R22] * iq_st
    # mutual terms, rotated from the other converter's frame
    x12 = p[P_L12] * (w0 + y2)
    mr = -x12 * iq_st
    mi = p[P_R12] * iq_st
    u1r += mr * rr - mi * ri
    u1i += mr * ri + mi * rr
    x21 = p[P_L21] * (w0 + x2)
    mr = p[P_R21] * id_ - x21 * iq + p[P_L21] * did
    mi = p[P_R21] * iq + x21 * id_ + p[P_L21] * diq
    u2r += mr * rr + mi * ri
    u2i += mi * rr - mr * ri
    dx3 = _accel(u1r, u1i, x2, p[P_KP_W], p[P_KI_W], p[P_R_T], p[P_L_T],
                 id_, iq, did, diq, w0, p[P_VDOT], p[P_WDOT])
    # STATCOM: no active current, so the inertia term is exactly one
    kp, ki, r = p[P_KP_S], p[P_KI_S], p[P_R_S]
    te = -ki * u2i + p[P_WDOT]
    if p[P_VDOT] != 0.0:
        vmag = np.sqrt(u2r * u2r + u2i * u2i)
        if vmag > 0.0:
            te -= kp * p[P_VDOT] * u2i / vmag
    dy3 = ki * r * iq_st - te - kp * u2r * y2
    return x2, dx3, y2, dy3


@njit(cache=True, error_model="numpy")
def rhs_many(t, x, p, sv, t_on, t_clear, sign, out):
    """Evaluate the RHS for every row of ``x`` (shape (n, 4)) into ``out``."""
    for k in range(x.shape[0]):
        a, b, c, d = rhs_trig(t, np.cos(x[k, 0]), np.sin(x[k, 0]), x[k, 1],
                              np.cos(x[k, 2]), np.sin(x[k, 2]), x[k, 3],
                              p, sv, t_on[k], t_clear[k])
        out[k, 0] = sign * a
        out[k, 1] = sign * b
        out[k, 2] = sign * c
        out[k, 3] = sign * d


@njit(cache=True, error_model="numpy")
def _rotate(c, s, eps):
    if abs(eps) < _TAYLOR_EPS:
        e2 = eps * eps
        ce = 1.0 - e2 / 2.0 * (1.0 - e2 / 12.0 * (1.0 - e2 / 30.0 * (1.0 - e2 / 56.0)))
        se = eps * (1.0 - e2 / 6.0 * (1.0 - e2 / 20.0 * (1.0 - e2 / 42.0 * (1.0 - e2 / 72.0))))
    else:
        ce = np.cos(eps)
        se = np.sin(eps)
    return c * ce - s * se, s * ce + c * se


@njit(cache=True, error_model="numpy")
def _quad(pm, x1, x3, y1, y3, center, wrap):
    """(x - center)' pm (x - center); with ``wrap`` the angle differences are
    taken modulo 2pi, i.e. the ellipsoid is centred on every copy of the
    equilibrium on the angle torus."""
    a = x1 - center[0]
    c = y1 - center[2]
    if wrap:
        a -= TWO_PI * np.floor(a / TWO_PI + 0.5)
        c -= TWO_PI * np.floor(c / TWO_PI + 0.5)
    v = (a, x3 - center[1], c, y3 - center[3])
    acc = 0.0
    for i in range(4):
        for j in range(4):
            acc += v[i] * pm[i, j] * v[j]
    return acc


@njit(cache=True, error_model="numpy", parallel=True)
def rk4_batch(x0, t0, dt, nsteps, sign, p, sv, t_on, t_clear, center, escape,
              save_every, pm, level, track, stop_on_enter, wrap):
    """Fixed-step classical RK4 for a batch of initial states.

    ``nsteps`` holds the step count of every row. ``sign`` = -1 integrates the
    reversed system; physical time then runs backwards from ``t0``. Rows whose
    state leaves the ``escape`` box around ``center`` or turns non-finite are
    frozen and flagged with the step index. When ``track`` is set, the first
    step at which the quadratic form (see :func:`_quad`) is <= level is
    recorded; with ``stop_on_enter`` that row is frozen there. Rows are
    independent, so they are distributed over the numba worker threads.
    """
    n = x0.shape[0]
    xf = x0.copy()
    esc = np.full(n, -1, dtype=np.int64)
    enter = np.full(n, -1, dtype=np.int64)
    nmax = 0
    for k in range(n):
        nmax = max(nmax, nsteps[k])
    nsave = nmax // save_every + 1 if save_every > 0 else 0
    saved = np.full((n, nsave, 4), np.nan)
    h = sign * dt
    for k in prange(n):
        x1, x3, y1, y3 = x0[k, 0], x0[k, 1], x0[k, 2], x0[k, 3]
        if save_every > 0:
            saved[k, 0, 0] = x1
            saved[k, 0, 1] = x3
            saved[k, 0, 2] = y1
            saved[k, 0, 3] = y3
        if track:
            if _quad(pm, x1, x3, y1, y3, center, wrap) <= level:
                enter[k] = 0
                if stop_on_enter:
                    continue
        ton = t_on[k]
        tcl = t_clear[k]
        for step in range(nsteps[k]):
            t = t0 + h * step
            c1 = np.cos(x1)
            s1 = np.sin(x1)
            c2 = np.cos(y1)
            s2 = np.sin(y1)
            a1, b1, g1, d1 = rhs_trig(t, c1, s1, x3, c2, s2, y3, p, sv, ton, tcl)
            ca, sa = _rotate(c1, s1, 0.5 * h * a1)
            cb, sb = _rotate(c2, s2, 0.5 * h * g1)
            a2, b2, g2, d2 = rhs_trig(t + 0.5 * h, ca, sa, x3 + 0.5 * h * b1,
                                      cb, sb, y3 + 0.5 * h * d1, p, sv, ton, tcl)
            ca, sa = _rotate(c1, s1, 0.5 * h * a2)
            cb, sb = _rotate(c2, s2, 0.5 * h * g2)
            a3, b3, g3, d3 = rhs_trig(t + 0.5 * h, ca, sa, x3 + 0.5 * h * b2,
                                      cb, sb, y3 + 0.5 * h * d2, p, sv, ton, tcl)
            ca, sa = _rotate(c1, s1, h * a3)
            cb, sb = _rotate(c2, s2, h * g3)
            a4, b4, g4, d4 = rhs_trig(t + h, ca, sa, x3 + h * b3,
                                      cb, sb, y3 + h * d3, p, sv, ton, tcl)
            x1 = x1 + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            x3 = x3 + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            y1 = y1 + h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
            y3 = y3 + h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            if save_every > 0 and (step + 1) % save_every == 0:
                j = (step + 1) // save_every
                saved[k, j, 0] = x1
                saved[k, j, 1] = x3
                saved[k, j, 2] = y1
                saved[k, j, 3] = y3
            bad = not (np.isfinite(x1) and np.isfinite(x3) and np.isfinite(y1) and np.isfinite(y3))
            if bad or (abs(x1 - center[0]) > escape or abs(x3 - center[1]) > escape
                       or abs(y1 - center[2]) > escape or abs(y3 - center[3]) > escape):
                esc[k] = step + 1
                break
            if track and enter[k] < 0:
                if _quad(pm, x1, x3, y1, y3, center, wrap) <= level:
                    enter[k] = step + 1
                    if stop_on_enter:
                        break
        xf[k, 0] = x1
        xf[k, 1] = x3
        xf[k, 2] = y1
        xf[k, 3] = y3
    return xf, esc, enter, saved
