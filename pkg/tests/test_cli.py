import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ripple_opf.cli import main
from ripple_opf.network import (DemandSeries, bundled_path, load_network, network_to_dict,
                                read_demand_csv, write_demand_csv)
from ripple_opf.oracle import read_spectrum_csv, read_trace_csv
from ripple_opf.power_flow import residuals, state_from_dict
from ripple_opf.presets import statcom_network


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_oracle_case_3d(tmp_path):
    assert main(["oracle", "--case", "3d", "--out", str(tmp_path)]) == 0
    spec = read_spectrum_csv(tmp_path / "spectrum.csv")
    assert abs(spec["p_dc"][2]) == pytest.approx(10200.0, rel=0.01)
    tr = read_trace_csv(tmp_path / "trace.csv")
    assert len(tr.time) == 20001
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["case"] == "3d"


def test_gamma_sweep_linear(tmp_path):
    assert main(["gamma-sweep", "--points", "11", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "summary.csv")
    g = np.array([float(r["gamma"]) for r in rows])
    i_n = np.array([float(r["neutral_current_a"]) for r in rows])
    rip = np.array([float(r["ripple_w"]) for r in rows])
    assert len(rows) == 11
    np.testing.assert_allclose(i_n, 90.0 * (1 - g), atol=1e-9)
    coef = np.polyfit(g, rip, 1)
    assert np.max(np.abs(np.polyval(coef, g) - rip)) < 0.01 * rip.max()
    assert coef[0] > 0


def test_opf_case_1b_neutral_zero(tmp_path):
    assert main(["opf", "--preset", "1b", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["neutral_current_per_vsc"]["statcom"] < 1e-6
    assert doc["status"] == "local_optimum"
    # the emitted state re-verifies against the network
    st = state_from_dict(doc["state"])
    assert residuals(statcom_network("1b"), st).max() < 1e-6
    rows = read_csv(tmp_path / "summary.csv")
    assert {r["leg"] for r in rows} == {"a", "b", "c", "n"}


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["opf", "--preset", "1d", "--out", str(out)]) == 0
    for name in ("solution.json", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_pf_roundtrip(tmp_path):
    path = bundled_path("demo_5bus.json")
    assert main(["pf", "--network", str(path), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    st = state_from_dict(doc["state"])
    assert residuals(load_network(path), st).max() < 1e-8


def test_series_outputs(tmp_path):
    full = read_demand_csv(bundled_path("toy_48step.csv"))
    part = DemandSeries(full.timestamps[34:40], full.steps[34:40])
    dpath = tmp_path / "d.csv"
    write_demand_csv(part, dpath)
    out = tmp_path / "o"
    assert main(["opf-series", "--preset", "1a", "--demand", str(dpath), "--out", str(out)]) == 0
    curve = read_csv(out / "duration_curve.csv")
    assert len(curve) == 6
    assert all(float(r["max_current_with_a"]) <= float(r["max_current_without_a"]) + 1e-9 for r in curve)
    assert len(read_csv(out / "summary.csv")) == 6


def test_validation_failure_exit_1(tmp_path):
    d = network_to_dict(load_network(bundled_path("toy_2bus.json")))
    d["branches"][0]["to_bus"] = "missing"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    out = tmp_path / "o"
    assert main(["pf", "--network", str(bad), "--out", str(out)]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 1 and "dangling_branch" in err["message"]
    assert main(["pf", "--network", str(tmp_path / "none.json"), "--out", str(out)]) == 1


def test_solver_failure_exit_2(tmp_path):
    assert main(["opf", "--preset", "2", "--max-iter", "3", "--starts", "1", "--out", str(tmp_path)]) == 2
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["error"] == "solver"


def test_overrides(tmp_path):
    assert main(["opf", "--preset", "1a", "--ripple-limit-w", "0", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["ripple_per_vsc"]["statcom"]["magnitude"] < 1e-3
    out = tmp_path / "b"
    assert main(["opf", "--preset", "1a", "--beta", "-1", "--out", str(out)]) == 1


def test_entry_point_with_logging(tmp_path):
    env = dict(os.environ, RIPPLE_OPF_LOG="debug")
    proc = subprocess.run([sys.executable, "-m", "ripple_opf.cli", "gamma-sweep", "--points", "3",
                           "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert (tmp_path / "summary.csv").exists()
