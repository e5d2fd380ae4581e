import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlroa import _core
from tlroa.model import (AggregationError, InjectionSchedule, ParameterError, PlantRhs,
                         SingularInertiaError, SystemState, WtParams, aggregate_scaling,
                         bus_voltages, saturate, statcom_rhs, system_rhs, wt_rhs)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(0.1, 100))
def test_saturation_bounded_and_odd(x3, lim):
    y = saturate(x3, lim)
    assert abs(y) <= lim
    assert saturate(-x3, lim) == pytest.approx(-y, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50))
def test_kernel_tanh_matches_numpy(z):
    assert _core._tanh(z) == pytest.approx(math.tanh(z), abs=1e-15)


def test_saturation_rejects_nonpositive_limit():
    with pytest.raises(ParameterError):
        saturate(1.0, 0.0)


def test_aggregation_scales_once():
    w = WtParams(kp=10, ki=800, r_lg=0.006, l_g=1.4e-3, n_turbines=20)
    a = aggregate_scaling(w)
    assert a.aggregated and a.unit_count == 20
    assert a.id_c == 20 and a.i_max == pytest.approx(22) and a.id_ramp == 40
    assert a.l_g == pytest.approx(w.l_g / 20) and a.r_lg == pytest.approx(w.r_lg / 20)
    with pytest.raises(AggregationError):
        aggregate_scaling(a)


def test_aggregation_preserves_voltage_drop():
    w = WtParams(kp=10, ki=800, r_lg=0.006, l_g=1.4e-3, n_turbines=20)
    a = aggregate_scaling(w)
    assert a.l_g * a.id_c == pytest.approx(w.l_g * w.id_c)
    assert a.inertia == pytest.approx(w.inertia)


@pytest.mark.parametrize("field,value", [("kp", 0.0), ("ki", -1.0), ("l_g", 0.0),
                                         ("i_max", 0.5), ("x2_max", 0.0)])
def test_wt_param_validation_names_field(field, value):
    kw = dict(kp=10, ki=800, r_lg=0.006, l_g=1.4e-3)
    kw[field] = value
    with pytest.raises(ParameterError):
        WtParams(**kw)


def test_fault_currents_k_factor_and_limit(shipped_config):
    wt = shipped_config.plant.wt
    n = wt.unit_count
    id_f, iq_f = InjectionSchedule(0, 1, v_fault=0.01).fault_currents(wt)
    assert iq_f == pytest.approx(0.02 * n)
    assert math.hypot(id_f, iq_f) == pytest.approx(wt.i_max)
    # deep dip: reactive current capped at 1 pu per turbine
    id_f, iq_f = InjectionSchedule(0, 1, v_fault=0.9).fault_currents(wt)
    assert iq_f == pytest.approx(n) and id_f == pytest.approx(math.sqrt(1.1 ** 2 - 1) * n)
    # without FRT the pre-fault currents are kept
    assert InjectionSchedule(0, 1, frt=False).fault_currents(wt) == (wt.id_c, wt.iq_c)


def test_schedule_modes_and_ramp(shipped_config):
    plant = shipped_config.plant
    s = InjectionSchedule(t_fault_on=0.1, t_clear=0.2, v_fault=0.01)
    assert [s.mode(t) for t in (0.0, 0.15, 0.3)] == ["normal", "fault", "post_fault_ramp"]
    c = s.currents(0.2 + 1e-3, plant.wt, plant.statcom)
    id_f, _ = s.fault_currents(plant.wt)
    # the ramp heads for the setpoint from either side
    sign = math.copysign(1.0, plant.wt.id_c - id_f)
    assert c["did"] == pytest.approx(sign * plant.wt.id_ramp)
    assert c["id"] == pytest.approx(id_f + sign * plant.wt.id_ramp * 1e-3)
    done = s.currents(0.2 + s.ramp_duration(plant.wt) + 1e-3, plant.wt, plant.statcom)
    assert done["id"] == pytest.approx(plant.wt.id_c) and done["did"] == 0
    with pytest.raises(ParameterError):
        InjectionSchedule(t_fault_on=1.0, t_clear=0.5)


def test_zero_state_derivatives_at_equilibrium(shipped_config, shipped_eq):
    f = system_rhs(0.0, shipped_eq.state, shipped_config.plant)
    assert np.max(np.abs(f)) < 1e-9


def test_reverse_rhs_is_negated(shipped_config, shipped_eq):
    x = shipped_eq.state + np.array([0.1, -2.0, 0.05, 3.0])
    fw = system_rhs(0.0, x, shipped_config.plant)
    rv = system_rhs(0.0, x, shipped_config.plant, direction="reverse")
    np.testing.assert_array_equal(rv, -fw)


def test_batch_rhs_matches_per_converter_functions(shipped_config):
    """The fused kernel agrees with the per-converter reference implementation."""
    plant = shipped_config.plant
    rng = np.random.default_rng(0)
    sched = InjectionSchedule.normal()
    for _ in range(5):
        x = rng.normal(size=4) * [0.5, 5, 0.5, 5]
        s = SystemState.from_array(x)
        inj = sched.currents(0.0, plant.wt, plant.statcom)
        v1, v2 = bus_voltages(s, inj, plant.network, plant.grid, wt=plant.wt, st=plant.statcom)
        d1, d3 = wt_rhs(s.x1, s.x3, v1, plant.wt, plant.grid, inj)
        e1, e3 = statcom_rhs(s.y1, s.y3, v2, plant.statcom, plant.grid, inj)
        np.testing.assert_allclose(system_rhs(0.0, x, plant), [d1, d3, e1, e3],
                                   rtol=1e-9, atol=1e-9)


def test_rhs_batch_shape(shipped_config, shipped_eq):
    rhs = PlantRhs(shipped_config.plant)
    x = np.tile(shipped_eq.state, (7, 1))
    assert rhs(0.0, x).shape == (7, 4)


def test_singular_inertia_rejected(shipped_config):
    plant = shipped_config.plant
    wt = plant.wt
    bad = replace(wt, kp=1.0 / (wt.l_g * wt.id_c))
    with pytest.raises(SingularInertiaError):
        wt_rhs(0.0, 0.0, 1.0 + 0j, bad, plant.grid)
