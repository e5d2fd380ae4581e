import math

import numpy as np
import pytest

from tlroa.fault import FaultScenario, estimate_cct, simulate_fault, verify_clearing
from tlroa.roa import TlRoa


def _roa(cfg, eq, e):
    return TlRoa(cfg.analysis.horizon, np.zeros((0, 4)), np.zeros((0, 4)),
                 np.zeros(0, dtype=int), e, eq, cfg.plant, cfg.analysis.dt)


def test_scenario_validation():
    with pytest.raises(ValueError):
        FaultScenario(duration_max=0.0)
    with pytest.raises(ValueError):
        FaultScenario(v_fault=-0.1)
    with pytest.raises(ValueError):
        FaultScenario(post_fault_ramp=-1.0)


def test_fault_trajectory_leaves_the_operating_point(shipped_config, shipped_eq):
    tr = simulate_fault(shipped_config.plant, shipped_eq, FaultScenario(duration_max=0.1))
    assert len(tr) == 1001 and tr.times[-1] == pytest.approx(0.1)
    np.testing.assert_array_equal(tr.states[0], shipped_eq.state)
    assert abs(tr.final[1]) > 1.0


def test_verdicts_short_and_long_faults(shipped_config, shipped_eq):
    sc = FaultScenario(duration_max=1.2)
    stable, norms = verify_clearing(shipped_config.plant, shipped_eq, sc, [0.02, 0.5])
    assert stable.tolist() == [True, False]
    assert norms[0] < 1e-3 < norms[1]


def test_shallow_dip_never_exits(shipped_config, shipped_eq, shipped_ellipsoid):
    sc = FaultScenario(duration_max=0.2, v_fault=0.9)
    rep = estimate_cct(shipped_config.plant, shipped_eq, sc,
                       _roa(shipped_config, shipped_eq, shipped_ellipsoid), cadence=0.05)
    assert rep.cct is None and "CCT >" in rep.message
    assert rep.membership.all() and rep.agreement == 1.0


def test_report_dict(shipped_config, shipped_eq, shipped_ellipsoid):
    sc = FaultScenario(duration_max=0.3)
    rep = estimate_cct(shipped_config.plant, shipped_eq, sc,
                       _roa(shipped_config, shipped_eq, shipped_ellipsoid), cadence=0.01)
    d = rep.to_dict()
    assert d["cct"] == pytest.approx(0.12)
    assert [c["kind"] for c in d["crossings"]][:2] == ["exit", "entry"]
    assert len(d["samples"]) == 31
    assert all(s["verdict"] in ("stable", "unstable") for s in d["samples"])
    assert 0.12 in d["candidate_times"] and all(t > 0.12 for t in d["candidate_times"][1:])
    assert math.isclose(rep.agreement, 1.0)


def test_cadence_must_divide(shipped_config, shipped_eq, shipped_ellipsoid):
    with pytest.raises(ValueError):
        estimate_cct(shipped_config.plant, shipped_eq, FaultScenario(duration_max=0.1),
                     _roa(shipped_config, shipped_eq, shipped_ellipsoid), cadence=0.00015)
