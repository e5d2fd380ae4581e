import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_continuous_lyapunov

from tlroa.lyapunov import (Ellipsoid, StabilityError, build_initial_roa, linearize,
                            lyapunov_residual, pll_block, quadratic_form_terms, sample_boundary,
                            solve_lyapunov, unit_sphere_points)
from tlroa.model import NetworkCoupling, PlantConfig


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_solver_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4)) * 10
    a -= (np.max(np.linalg.eigvals(a).real) + 1.0) * np.eye(4)
    p = solve_lyapunov(a)
    np.testing.assert_allclose(p, solve_continuous_lyapunov(a.T, -np.eye(4)), rtol=1e-8,
                               atol=1e-12)
    assert lyapunov_residual(p, a) < 1e-9


def test_block_diagonal_a_gives_block_diagonal_p(shipped_config, shipped_eq):
    lin = linearize(shipped_config.plant, shipped_eq, coupling="block")
    p = solve_lyapunov(lin.a_full)
    assert np.all(p[:2, 2:] == 0) and np.all(p[2:, :2] == 0)


def test_full_coupling_has_cross_terms(shipped_config, shipped_eq):
    a = linearize(shipped_config.plant, shipped_eq).a_full
    assert np.any(a[:2, 2:] != 0) and np.any(a[2:, :2] != 0)


def test_decoupled_network_jacobian_is_block_diagonal(shipped_config, shipped_eq):
    from tlroa.loadflow import solve_equilibrium

    plant = shipped_config.plant
    net = NetworkCoupling(r=np.diag(np.diag(plant.network.r)), l=np.diag(np.diag(plant.network.l)))
    p2 = PlantConfig(plant.wt, plant.statcom, plant.grid, net)
    a = linearize(p2, solve_equilibrium(p2)).a_full
    assert np.all(a[:2, 2:] == 0) and np.all(a[2:, :2] == 0)


def test_pll_block_structure():
    a = pll_block(kp=5.0, ki=100.0, inertia=1.0, l_eff=0.01, i_d=1.0, v_sync=1.0, v_damp=0.9)
    assert a[0, 0] == 0 and a[0, 1] == 1
    assert np.all(np.linalg.eigvals(a).real < 0)


def test_unstable_linearisation_raises(shipped_config, shipped_eq):
    from tlroa.loadflow import Equilibrium

    with pytest.raises(ValueError):
        linearize(shipped_config.plant, shipped_eq, coupling="nope")
    # the anti-phase solution of the angle equations is a saddle
    flipped = Equilibrium(shipped_eq.x1_0 + np.pi, shipped_eq.y1_0 + np.pi,
                          shipped_eq.v_wt, shipped_eq.v_st, 0.0)
    with pytest.raises(StabilityError):
        linearize(shipped_config.plant, flipped)


def test_ellipsoid_validation():
    with pytest.raises(ValueError):
        Ellipsoid(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        Ellipsoid(np.eye(2), level=0.0)
    with pytest.raises(ValueError):
        Ellipsoid(np.array([[1.0, 0.1], [0.0, 1.0]]))


@pytest.mark.parametrize("strategy", ["fibonacci", "random-uniform"])
def test_boundary_samples_on_level_set(shipped_ellipsoid, strategy):
    x = sample_boundary(shipped_ellipsoid, 500, strategy, seed=3)
    np.testing.assert_allclose(shipped_ellipsoid.value(x), shipped_ellipsoid.level, rtol=1e-12)


def test_sampler_deterministic_and_spread():
    a = unit_sphere_points(1000, "random-uniform", seed=1)
    np.testing.assert_array_equal(a, unit_sphere_points(1000, "random-uniform", seed=1))
    f = unit_sphere_points(1000)
    np.testing.assert_allclose(np.linalg.norm(f, axis=1), 1.0, rtol=1e-14)
    # roughly uniform: the mean is near zero and second moments near 1/4
    assert np.max(np.abs(f.mean(axis=0))) < 0.02
    np.testing.assert_allclose(np.diag(f.T @ f) / 1000, 0.25, atol=0.02)
    with pytest.raises(ValueError):
        unit_sphere_points(10, "grid")


def test_ellipsoid_json_round_trip(shipped_ellipsoid):
    e = Ellipsoid.from_dict(shipped_ellipsoid.to_dict())
    np.testing.assert_array_equal(e.p, shipped_ellipsoid.p)
    assert e.level == shipped_ellipsoid.level


def test_quadratic_form_terms():
    p = np.array([[2.0, 0.5], [0.5, 3.0]])
    t = quadratic_form_terms(p, ("a", "b"))
    assert t == {"a^2": 2.0, "a*b": 1.0, "b^2": 3.0}
    assert build_initial_roa(p, 0.1).level == 0.1
