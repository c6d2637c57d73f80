import numpy as np
import pytest

from ripple_opf.network import (admittance, bundled_network, free_nodes, kron_reduce,
                                load_network, network_from_dict, network_to_dict, read_demand_csv,
                                save_network, sequence_impedance, validate, write_demand_csv,
                                bundled_path)
from ripple_opf.phasor import alpha_power
from netfactory import unit_dict

BUNDLED = ("toy_2bus", "demo_5bus", "two_feeder_sop")


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_networks_validate(name):
    assert validate(bundled_network(name)) == []


@pytest.mark.parametrize("name", BUNDLED)
def test_json_roundtrip(name, tmp_path):
    net = bundled_network(name)
    path = tmp_path / "net.json"
    save_network(net, path)
    again = load_network(path)
    assert network_to_dict(again) == network_to_dict(net)


def codes(d):
    return {i.code for i in validate(network_from_dict(d))}


def test_validation_issues():
    assert codes(unit_dict()) == set()
    d = unit_dict()
    d["branches"][0]["to_bus"] = "nowhere"
    assert "dangling_branch" in codes(d)
    d = unit_dict()
    d["buses"][1]["conductors"] = ["a", "b", "c"]
    d["branches"][0]["conductors"] = ["a", "b", "c"]
    d["vscs"] = [{"id": "v", "legs": [{"id": c, "bus": "r", "conductor": c} for c in "abcn"],
                  "dc_link": {"capacitance": 1e-3, "vdc_nominal": 700}}]
    assert "missing_conductor" in codes(d)
    d = unit_dict()
    d["buses"][1]["v_min"] = 1.2
    assert "invalid_bounds" in codes(d)
    d = unit_dict()
    d["sources"] = []
    assert "island_source_count" in codes(d)


def test_schema_version_required():
    d = unit_dict()
    d["schema_version"] = 7
    with pytest.raises(ValueError):
        network_from_dict(d)


def test_sequence_impedance_expansion():
    z0, z1 = 0.3 + 0.2j, 0.1 + 0.05j
    z = np.asarray(sequence_impedance(z0, z1, 0.2 + 0.1j))
    # phase block maps a pure positive-sequence current to z1 times it
    i = np.array([1, alpha_power(-1), alpha_power(-2)])
    np.testing.assert_allclose(z[:3, :3] @ i, z1 * i, atol=1e-12)
    np.testing.assert_allclose(z[:3, :3] @ np.ones(3), z0 * np.ones(3), atol=1e-12)
    np.testing.assert_allclose(z, z.T)


def test_admittance_single_branch():
    d = unit_dict()
    d["branches"][0]["impedance"] = {"re": np.diag([0.1, 0.1, 0.1, 0.2]).tolist(),
                                     "im": np.diag([0.1, 0.1, 0.1, 0.1]).tolist()}
    net = network_from_dict(d)
    y, nodes = admittance(net)
    y = y.toarray()
    k = nodes.index(("r", "a"))
    j = nodes.index(("s", "a"))
    assert y[k, k] == pytest.approx(1 / (0.1 + 0.1j))
    assert y[k, j] == pytest.approx(-1 / (0.1 + 0.1j))
    # doubling with a parallel branch
    d["branches"].append(dict(d["branches"][0], id="l2"))
    y2, _ = admittance(network_from_dict(d))
    np.testing.assert_allclose(y2.toarray(), 2 * y)


def test_admittance_flat_profile_no_injection():
    net = bundled_network("demo_5bus")
    y, nodes = admittance(net)
    flat = {"a": 1.0, "b": alpha_power(-1), "c": alpha_power(-2), "n": 0.0}
    v = np.array([230.0 * flat[c] for _, c in nodes])
    assert np.max(np.abs(y @ v)) < 1e-9


def test_free_nodes_excludes_solid_ground():
    nodes = free_nodes(bundled_network("toy_2bus"))
    assert ("sub", "n") not in nodes and ("pcc", "n") in nodes


def test_kron_reduce_requires_grounded_neutrals():
    with pytest.raises(ValueError):
        kron_reduce(bundled_network("toy_2bus"))


def test_with_demand():
    net = bundled_network("toy_2bus")
    new = net.with_demand({("pcc", "c"): (20.0, 2.0)})
    assert new.loads[0].p_kw == (23.0, 7.6, 20.0)
    with pytest.raises(KeyError):
        net.with_demand({("sub", "a"): (1.0, 0.0)})


def test_demand_csv_roundtrip(tmp_path):
    series = read_demand_csv(bundled_path("toy_48step.csv"))
    assert len(series) == 48
    peak = max(range(48), key=lambda k: series.steps[k][("pcc", "c")][0])
    assert all(series.steps[peak][("pcc", "c")][0] > series.steps[peak][("pcc", p)][0] for p in "ab")
    path = tmp_path / "d.csv"
    write_demand_csv(series, path)
    again = read_demand_csv(path)
    assert again.timestamps == series.timestamps and again.steps == series.steps


def test_demand_csv_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,bus,phase,p,q\n")
    with pytest.raises(ValueError):
        read_demand_csv(path)
