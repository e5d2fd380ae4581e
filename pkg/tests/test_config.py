import json
import math
from importlib.resources import files

import numpy as np
import pytest

from tlroa.config import BaseValues, ConfigError, from_dict, load_config
from tlroa.model import AggregationError

SHIPPED = files("tlroa") / "data" / "plant.json"


def raw():
    return json.loads(SHIPPED.read_text())


def test_shipped_config_converts_to_per_unit(shipped_config):
    b = BaseValues()
    assert b.v_base == pytest.approx(563.38, abs=0.01)
    assert b.z_base == pytest.approx(0.039675, rel=1e-4)
    wt = shipped_config.plant.wt
    assert wt.aggregated and wt.n_turbines == 20
    assert wt.kp == pytest.approx(0.025 * b.v_base)
    assert wt.l_g == pytest.approx(1.8e-5 / b.z_base / 20)
    assert wt.id_c == 20 and wt.i_max == pytest.approx(22)
    assert wt.id_ramp == pytest.approx(28400 / b.i_base * 20)
    assert shipped_config.plant.statcom.l_s == pytest.approx(1.8e-5 / b.z_base)
    assert shipped_config.plant.grid.omega_0 == pytest.approx(100 * math.pi)


def test_defaults_are_echoed(shipped_config):
    r = shipped_config.resolved
    assert r["analysis"]["escape"] == 1e3 and r["wt"]["aggregate"] is True
    assert r["schedule"]["fault_type"] == "bolted-3ph-at-connection-point"
    # the echo reloads to the same configuration
    again = from_dict(r)
    assert again.hash == shipped_config.hash
    np.testing.assert_array_equal(again.plant.network.l, shipped_config.plant.network.l)


def test_kp_zero_rejected():
    d = raw()
    d["wt"]["kp"] = 0
    with pytest.raises(ConfigError, match="kp > 0"):
        from_dict(d)


@pytest.mark.parametrize("section,field,value,msg", [
    ("wt", "l_g", "big", "wt.l_g must be a number"),
    ("statcom", "ki", -1, "ki > 0"),
    ("wt", "colour", 1, "unknown field"),
    ("analysis", "dt", 0, "analysis.dt > 0"),
    ("schedule", "duration_max", 0, "duration_max > 0"),
    ("wt", "units", "kV", "wt.units"),
])
def test_schema_errors_name_the_field(section, field, value, msg):
    d = raw()
    d[section][field] = value
    with pytest.raises(ConfigError, match=msg):
        from_dict(d)


def test_inconsistent_aggregation_flags():
    d = raw()
    d["wt"].update(aggregated=True, aggregate=True)
    with pytest.raises(AggregationError):
        from_dict(d)


def test_pre_aggregated_values_used_as_given():
    d = raw()
    d["wt"].update(aggregated=True, id_c=20.0, i_max=22.0, units="pu", kp=14.0, ki=845.0,
                   r_lg=0.0063 / 20, l_g=4.5e-4 / 20, id_ramp=40.0)
    wt = from_dict(d).plant.wt
    assert wt.id_c == 20.0 and wt.kp == 14.0 and wt.aggregated


def test_missing_network_uses_fitted_file(tmp_path, shipped_config):
    d = raw()
    net = d.pop("network")
    (tmp_path / "network.json").write_text(json.dumps(net))
    (tmp_path / "cfg.json").write_text(json.dumps(d))
    cfg = load_config(tmp_path / "cfg.json", network_file=tmp_path / "network.json")
    np.testing.assert_array_equal(cfg.plant.network.l, shipped_config.plant.network.l)
    with pytest.raises(ConfigError, match="network"):
        load_config(tmp_path / "cfg.json")


def test_overrides_change_hash(shipped_config):
    c = shipped_config.with_overrides(seed=5)
    assert c.analysis.seed == 5 and c.hash != shipped_config.hash
    assert shipped_config.with_overrides(seed=None) is shipped_config
    s = shipped_config.with_overrides("schedule", v_fault=0.2)
    assert s.scenario.v_fault == 0.2


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)
