import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlroa.model import InjectionSchedule, PlantRhs
from tlroa.roa import (Hyperplane, TlRoa, build_tlroa, count_holes, expand_states, integrate,
                       integrate_batch, is_member, plane_coordinates, project, slice, wrap_angles)


def _roa(cfg, eq, e, horizon=2.25):
    return TlRoa(horizon, np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0, dtype=int), e, eq,
                 cfg.plant, 1e-4)


def test_rk4_fourth_order():
    def f(t, x):
        return np.array([x[1], -x[0]])

    errs = []
    for dt in (0.1, 0.05):
        tr = integrate(f, [1.0, 0.0], (0.0, 1.0), dt)
        errs.append(abs(tr.final[0] - math.cos(1.0)))
    assert 14 < errs[0] / errs[1] < 18


def test_reverse_runs_time_backwards():
    tr = integrate(lambda t, x: np.array([1.0]), [0.0], (2.0, 3.0), 0.25, direction="reverse")
    np.testing.assert_allclose(tr.times, [2.0, 1.75, 1.5, 1.25, 1.0])
    assert tr.final[0] == pytest.approx(-1.0)


def test_compiled_and_numpy_paths_agree(shipped_config, shipped_eq):
    rhs = PlantRhs(shipped_config.plant, InjectionSchedule(0.01, 0.05))
    x0 = shipped_eq.state + [0.05, 1.0, -0.05, 0.0]
    fast = integrate(rhs, x0, (0.0, 0.1), 1e-4)
    slow = integrate(lambda t, x: rhs(t, x), x0, (0.0, 0.1), 1e-4)
    np.testing.assert_allclose(fast.states, slow.states, rtol=1e-9, atol=1e-9)


def test_escape_is_flagged():
    tr = integrate(lambda t, x: x, [1.0], (0.0, 20.0), 0.01, escape=100.0)
    assert tr.terminated_early and "escape" in tr.reason
    assert abs(tr.final[0]) > 100 and tr.times[-1] < 5


def test_duration_must_be_step_multiple():
    with pytest.raises(ValueError):
        integrate(lambda t, x: x, [1.0], (0.0, 0.10005), 0.01)


def test_build_small_cloud(shipped_config, shipped_eq, shipped_ellipsoid):
    roa = build_tlroa(shipped_config.plant, shipped_eq, shipped_ellipsoid, horizon=0.2,
                      n_samples=64, keep_tubes=True, tube_every=100, check_fraction=0.25)
    assert roa.boundary_cloud.shape == (64, 4)
    assert roa.consistency["passed"] and len(roa.consistency["checked"]) == 16
    assert roa.tubes.shape == (64, 21, 4)
    np.testing.assert_allclose(roa.tubes[:, 0], roa.seeds, atol=1e-15)
    np.testing.assert_allclose(roa.tubes[:, -1], roa.boundary_cloud)
    # reverse flow pushes the boundary outward
    v = shipped_ellipsoid.value(roa.boundary_cloud)
    assert np.all(v > shipped_ellipsoid.level)


def test_cloud_deterministic(shipped_config, shipped_eq, shipped_ellipsoid):
    a = build_tlroa(shipped_config.plant, shipped_eq, shipped_ellipsoid, 0.05, 32,
                    strategy="random-uniform", seed=4)
    b = build_tlroa(shipped_config.plant, shipped_eq, shipped_ellipsoid, 0.05, 32,
                    strategy="random-uniform", seed=4)
    np.testing.assert_array_equal(a.boundary_cloud, b.boundary_cloud)


def test_membership_basic(shipped_config, shipped_eq, shipped_ellipsoid):
    roa = _roa(shipped_config, shipped_eq, shipped_ellipsoid)
    m = is_member(np.array([[0, 0, 0, 0], [0, 5.0, 0, 0], [3.0, 0, 3.0, 0]]), roa)
    assert m.inside[0] and m.time[0] == 0.0
    assert m.inside.tolist() == [True, True, False]
    assert 0 < m.time[1] < 2.25 and math.isnan(m.time[2])


def test_membership_on_the_angle_torus(shipped_config, shipped_eq, shipped_ellipsoid):
    roa = _roa(shipped_config, shipped_eq, shipped_ellipsoid, horizon=0.1)
    copy = shipped_eq.state + [2 * np.pi, 0, -2 * np.pi, 0]
    assert is_member(copy, roa, absolute=True).inside[0]
    assert not is_member(copy, roa, absolute=True, wrap=False).inside[0]


def test_wrap_angles():
    c = np.array([0.2, 0.0, -0.1, 0.0])
    x = np.array([0.2 + 4 * np.pi + 0.3, 5.0, -0.1 - 2 * np.pi, 7.0])
    np.testing.assert_allclose(wrap_angles(x, c), [0.5, 5.0, -0.1, 7.0], atol=1e-12)


def test_batch_per_row_clearing(shipped_config, shipped_eq):
    rhs = PlantRhs(shipped_config.plant, InjectionSchedule(0.0, math.inf, v_fault=0.5))
    x0 = np.tile(shipped_eq.state, (2, 1))
    res = integrate_batch(rhs, x0, 0.0, [0.05, 0.1], 1e-4, t_clear=[0.02, 0.04], save_every=10)
    assert res.saved.shape == (2, 101, 4)
    assert np.all(np.isnan(res.saved[0, 51:])) and np.all(np.isfinite(res.saved[1]))
    # identical until the first clearing instant
    np.testing.assert_array_equal(res.saved[0, :20], res.saved[1, :20])
    assert not np.array_equal(res.saved[0, 30], res.saved[1, 30])


def test_expand_states(shipped_config):
    x = np.array([[0.1, 100.0, 0.2, -100.0]])
    full = expand_states(x, shipped_config.plant)
    assert full.shape == (1, 6)
    assert full[0, 1] == pytest.approx(shipped_config.plant.wt.x2_max * math.tanh(100 / 10 / math.pi))
    assert full[0, 2] == 100.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(0.01, 1))
def test_slice_distance(intercept, thickness):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(500, 4))
    h = Hyperplane((1.0, 2.0, 0.0, -1.0), intercept, thickness)
    cut = slice(pts, h)
    assert np.all(np.abs(h.distance(cut)) <= thickness)
    assert len(cut) == np.sum(np.abs(h.distance(pts)) <= thickness)


def test_hyperplane_validation():
    with pytest.raises(ValueError):
        Hyperplane((0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        Hyperplane((1.0, 0.0), 1.0, thickness=0.0)
    with pytest.raises(ValueError):
        slice(np.zeros((3, 4)), Hyperplane((1.0, 0.0), 0.0))


def test_project_saturated_axis(shipped_config):
    x = np.array([[0.1, 50.0, 0.2, 0.0]])
    p = project(x, ("x1", "x2"), shipped_config.plant)
    assert p[0, 1] < shipped_config.plant.wt.x2_max
    with pytest.raises(ValueError):
        project(x, ("x1", "x2"))
    with pytest.raises(ValueError):
        project(x, ("x1", "x1"))


def test_count_holes_and_plane_coordinates():
    rng = np.random.default_rng(0)
    r = np.sqrt(rng.uniform(0.25, 1.0, 20000))
    phi = rng.uniform(0, 2 * np.pi, 20000)
    ring = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    assert count_holes(ring, 0.05) == 1
    disk = ring * np.sqrt(rng.uniform(0, 1, (20000, 1)))
    assert count_holes(np.vstack([ring, disk]), 0.05) == 0
    q = plane_coordinates(np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]]), (1, 1, 1))
    assert np.linalg.norm(q[0]) < 1e-12 and np.linalg.norm(q[1]) == pytest.approx(math.sqrt(2))
