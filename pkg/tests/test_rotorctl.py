"""Tests for the rotorctl scenario parser, state files and subcommands."""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import csv
import json

import numpy as np
import pytest

from errors import ConfigurationError, StateFormatError
from qspace import Rotor, SpaceLayout, basis_state, random_density_matrix
from rotorctl import (
    DRIVEN_COLUMNS, SWEEP_COLUMNS, TIMESERIES_COLUMNS, apply_override, load_state, main,
    parse_scenario, run_sweep, save_state, scenario_from_dict,
)
from run_tracker import run_tracker

LOOSE_EDGES = {"edge_warn": 0.5, "edge_abort": 0.99}
SCENARIOS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")
FULL_SCALE = pytest.mark.skipif(not os.environ.get("ROTOR_ACCEPTANCE"),
                                reason="full-scale sweep; set ROTOR_ACCEPTANCE=1")


def _mill_block(**kw):
    block = {"kind": "mill", "G": 10.0, "kappa": 10.0, "n_hot": 1.0, "n_cold": 0.0, "rotor": [-3, 3]}
    block.update(kw)
    return block


def _write(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data, encoding="utf-8")
    return str(path)


def _free_rotor_with_load(l=8, T_R=2.0):
    return {
        "model": {"kind": "free_rotor", "rotor": [-l, l]},
        "load": {"gamma": 1.0, "T_R": T_R},
        "integrator": {"method": "rk4"},
        "steady": {"tol": 1e-7, "t_max": 200.0},
    }


# ════════════════════════════════════════════════════════════
# SCENARIO PARSING
# ════════════════════════════════════════════════════════════

def test_scenario_defaults():
    s = scenario_from_dict({"model": _mill_block()})
    assert s.kind == "mill"
    assert s.rotor == (-3, 3)
    assert s.I == 1.0
    assert s.load is None and s.drive is None
    assert s.outputs == TIMESERIES_COLUMNS
    assert s.steady_tol == 1e-8


def test_canonical_form_is_stable():
    s = scenario_from_dict({"seed": 3, "model": _mill_block(), "load": {"T_R": 1.0, "gamma": 0.1}})
    again = scenario_from_dict(json.loads(s.canonical()))
    assert again.canonical() == s.canonical()
    assert s.canonical().startswith('{"load":')


SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "scenarios")


@pytest.mark.parametrize("name", sorted(os.listdir(SCENARIO_DIR)))
def test_shipped_scenarios_parse(name):
    s = parse_scenario(os.path.join(SCENARIO_DIR, name))
    assert scenario_from_dict(json.loads(s.canonical())).canonical() == s.canonical()


def test_empty_file_names_model(tmp_path):
    with pytest.raises(ConfigurationError) as exc:
        parse_scenario(_write(tmp_path, "  \n"))
    assert exc.value.key_path == "model"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError) as exc:
        parse_scenario(str(tmp_path / "nope.json"))
    assert exc.value.key_path == "scenario"


def test_unknown_model_key():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(foo=1)})
    assert exc.value.key_path == "model.foo"


def test_negative_kappa_key_path():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(kappa=-1.0)})
    assert exc.value.key_path == "model.kappa"


def test_load_temperature_key_path():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(), "load": {"gamma": 0.1, "T_R": -1.0}})
    assert exc.value.key_path.startswith("load.")


def test_drive_with_rotor_rejected():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(), "drive": {"omega": 1.0}})
    assert exc.value.key_path == "drive"


def test_drive_with_load_rejected():
    model = _mill_block()
    del model["rotor"]
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": model, "load": {"gamma": 0.1, "T_R": 1.0}, "drive": {"omega": 1.0}})
    assert exc.value.key_path == "drive"


def test_effective_mill_restrictions_at_parse_time():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(kind="effective_mill", delta=1.0)})
    assert exc.value.key_path.startswith("model")


def test_unknown_output_column():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(), "outputs": ["L_mean", "bogus"]})
    assert exc.value.key_path == "outputs.1"


def test_outputs_keep_canonical_order():
    s = scenario_from_dict({"model": _mill_block(), "outputs": ["trace_err", "L_mean"]})
    assert s.outputs == ("t", "L_mean", "trace_err")


def test_sweep_range_log():
    s = scenario_from_dict({
        "model": _mill_block(), "load": {"gamma": 0.1, "T_R": 1.0},
        "sweep": {"parameter": "load.gamma", "range": {"start": 0.01, "stop": 1.0, "num": 3, "scale": "log"}},
    })
    assert np.allclose(s.sweep.values, [0.01, 0.1, 1.0])


def test_sweep_needs_values_or_range():
    with pytest.raises(ConfigurationError) as exc:
        scenario_from_dict({"model": _mill_block(), "sweep": {"parameter": "load.gamma"}})
    assert exc.value.key_path == "sweep"


def test_override_parses_json_and_falls_back_to_string():
    data = {"load": {"gamma": 0.1}}
    apply_override(data, "load.gamma=0.05")
    apply_override(data, "model.fluid=oscillator")
    assert data["load"]["gamma"] == 0.05
    assert data["model"]["fluid"] == "oscillator"


def test_override_needs_equals():
    with pytest.raises(ConfigurationError):
        apply_override({}, "load.gamma")


def test_parse_scenario_applies_overrides(tmp_path):
    path = _write(tmp_path, {"model": _mill_block(), "load": {"gamma": 0.1, "T_R": 1.0}})
    s = parse_scenario(path, ["load.gamma=0.25"])
    assert s.load.gamma == 0.25


# ════════════════════════════════════════════════════════════
# STATE FILES
# ════════════════════════════════════════════════════════════

def test_state_file_is_bit_exact(tmp_path):
    layout = SpaceLayout.from_descriptor("rotor -2 2 qubit")
    rho = random_density_matrix(layout, np.random.default_rng(8))
    path = str(tmp_path / "rho.rqdm")
    save_state(rho, path)
    loaded = load_state(path)
    assert loaded.layout == layout
    assert np.array_equal(loaded.data, rho.data)


def test_state_file_header(tmp_path):
    rho = basis_state(SpaceLayout((Rotor(-1, 1),)), [0])
    path = tmp_path / "rest.rqdm"
    save_state(rho, str(path))
    blob = path.read_bytes()
    assert blob.startswith(b"RQDM1\nrotor -1 1\n")
    assert len(blob) == len(b"RQDM1\nrotor -1 1\n") + 9 * 16
    assert load_state(str(path)).data[1, 1] == 1.0


def test_state_file_bad_magic(tmp_path):
    path = tmp_path / "bad.rqdm"
    path.write_bytes(b"RQDM2\nqubit\n" + b"\x00" * 64)
    with pytest.raises(StateFormatError):
        load_state(str(path))


def test_state_file_truncated(tmp_path):
    path = tmp_path / "short.rqdm"
    path.write_bytes(b"RQDM1\nqubit\n" + b"\x00" * 40)
    with pytest.raises(StateFormatError):
        load_state(str(path))


def test_state_file_bad_descriptor(tmp_path):
    path = tmp_path / "desc.rqdm"
    path.write_bytes(b"RQDM1\nspin 3\n" + b"\x00" * 64)
    with pytest.raises(StateFormatError):
        load_state(str(path))


# ════════════════════════════════════════════════════════════
# SUBCOMMANDS
# ════════════════════════════════════════════════════════════

def test_steady_free_rotor_equipartition(tmp_path):
    path = _write(tmp_path, _free_rotor_with_load())
    out = tmp_path / "out"
    assert main(["steady", "--scenario", path, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is True
    assert abs(summary["final"]["kinetic_energy"] - 1.0) < 0.1
    assert abs(summary["final"]["W_out_rate"]) < 1e-4
    assert (out / "steady_state.rqdm").exists()
    rho = load_state(str(out / "steady_state.rqdm"))
    assert rho.layout.descriptor() == "rotor -8 8"
    assert summary["run"]["total_steps"] > 0
    assert summary["run"]["breakdown"]["steady"]["methods"] == ["rk4"]
    assert run_tracker.get_run_summary("steady") is None


def test_steady_not_converged_exit_code(tmp_path):
    data = _free_rotor_with_load()
    data["steady"] = {"tol": 1e-14, "t_max": 1.0}
    path = _write(tmp_path, data)
    out = tmp_path / "out"
    assert main(["steady", "--scenario", path, "--out", str(out)]) == 5
    assert json.loads((out / "summary.json").read_text())["converged"] is False


def test_configuration_error_exit_code(tmp_path):
    path = _write(tmp_path, {"model": _mill_block(kappa=-1.0)})
    assert main(["simulate", "--scenario", path, "--out", str(tmp_path / "out")]) == 2


def test_truncation_overflow_exit_code(tmp_path):
    data = {"model": _mill_block(rotor=[-2, 2]), "integrator": {"method": "rk4", "t_end": 5.0}}
    path = _write(tmp_path, data)
    assert main(["simulate", "--scenario", path, "--out", str(tmp_path / "out")]) == 3


def test_simulate_csv_is_reproducible(tmp_path):
    data = {"model": _mill_block(), "integrator": dict(method="rk4", dt=0.01, t_end=0.2, **LOOSE_EDGES)}
    path = _write(tmp_path, data)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--scenario", path, "--out", str(a)]) == 0
    assert main(["simulate", "--scenario", path, "--out", str(b)]) == 0
    first = (a / "timeseries.csv").read_bytes()
    assert first == (b / "timeseries.csv").read_bytes()
    rows = list(csv.reader(first.decode("utf-8").splitlines()))
    assert rows[0] == list(TIMESERIES_COLUMNS)
    assert len(rows) == 1 + 21
    assert float(rows[-1][0]) == pytest.approx(0.2)
    summary = json.loads((a / "summary.json").read_text())
    assert summary["final"]["W_out_rate"] is None


def test_sweep_keeps_order_and_records_failures(tmp_path):
    data = _free_rotor_with_load(l=6, T_R=1.0)
    data["steady"] = {"tol": 1e-6, "t_max": 200.0}
    data["sweep"] = {"parameter": "load.gamma", "values": [0.5, -1.0, 1.0]}
    s = scenario_from_dict(data)
    rows = run_sweep(s, workers=1)
    assert [r["index"] for r in rows] == [0, 1, 2]
    assert [r["value"] for r in rows] == [0.5, -1.0, 1.0]
    assert rows[0]["converged"] and rows[2]["converged"]
    assert rows[1]["error"].startswith("ConfigurationError")
    assert rows[0]["error"] == ""


def test_sweep_rejects_bad_parameter_path():
    data = _free_rotor_with_load()
    data["sweep"] = {"parameter": "load.gama", "values": [0.5]}
    s = scenario_from_dict(data)
    with pytest.raises(ConfigurationError) as exc:
        run_sweep(s)
    assert exc.value.key_path == "load.gama"


def test_sweep_command_writes_csv(tmp_path):
    data = _free_rotor_with_load(l=6, T_R=1.0)
    data["steady"] = {"tol": 1e-6, "t_max": 200.0}
    data["sweep"] = {"parameter": "load.T_R", "values": [0.5, 1.0]}
    path = _write(tmp_path, data)
    out = tmp_path / "out"
    assert main(["sweep", "--scenario", path, "--out", str(out), "--workers", "1"]) == 0
    with open(out / "sweep.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(SWEEP_COLUMNS)
    assert [r[0] for r in rows[1:]] == ["0", "1"]


def test_driven_command(tmp_path):
    model = {"kind": "piston", "g": 1.0, "kappa": 1.0, "n_hot": 1.0, "n_cold": 0.0}
    path = _write(tmp_path, {"model": model, "drive": {"omega": 1.0, "cycles": 2},
                             "integrator": {"method": "rk4"}})
    out = tmp_path / "out"
    assert main(["driven", "--scenario", path, "--out", str(out)]) == 0
    with open(out / "driven.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(DRIVEN_COLUMNS)
    assert len(rows) == 1 + 2 * 200 + 1
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["cycles"]) == 2
    assert summary["max_first_law_defect"] < 1e-6
    assert summary["ideal_cycle_work"] > 0


def test_simulate_routes_drive_to_driven(tmp_path):
    model = {"kind": "piston", "g": 1.0, "kappa": 1.0, "n_hot": 1.0, "n_cold": 0.0}
    path = _write(tmp_path, {"model": model, "drive": {"omega": 2.0, "cycles": 1}})
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", path, "--out", str(out)]) == 0
    assert (out / "driven.csv").exists()
    assert not (out / "timeseries.csv").exists()


def test_predict_prints_json(tmp_path, capsys):
    path = _write(tmp_path, {"model": _mill_block(G=10.0, kappa=50.0), "load": {"gamma": 0.1, "T_R": 1.0}})
    assert main(["predict", "--scenario", path]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["xi"] - 2.0 / 3.0) < 1e-12
    assert out["dLdt_piston"] is None


def test_predict_free_rotor_rejected(tmp_path):
    path = _write(tmp_path, {"model": {"kind": "free_rotor"}})
    assert main(["predict", "--scenario", path]) == 2


def test_ergotropy_of_saved_state(tmp_path, capsys):
    layout = SpaceLayout.from_descriptor("rotor -3 3 qubit")
    path = str(tmp_path / "excited.rqdm")
    save_state(basis_state(layout, [2, 1]), path)
    assert main(["ergotropy", "--state", path]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["ergotropy"] - 2.0) < 1e-12
    assert abs(out["passive_energy"]) < 1e-12


def test_ergotropy_needs_state():
    assert main(["ergotropy"]) == 2


# ════════════════════════════════════════════════════════════
# FULL-SCALE SWEEPS
# ════════════════════════════════════════════════════════════

@FULL_SCALE
def test_piston_output_peaks_inside_gamma_sweep():
    rows = run_sweep(parse_scenario(os.path.join(SCENARIOS, "piston_gamma_sweep.json")), workers=4)
    assert all(r["converged"] for r in rows)
    power = [r["W_out_rate"] for r in rows]
    best = int(np.argmax(power))
    assert 0 < best < len(power) - 1


@FULL_SCALE
def test_mill_efficiency_falls_along_gamma_sweep():
    rows = run_sweep(parse_scenario(os.path.join(SCENARIOS, "mill_gamma_sweep.json")), workers=4)
    assert all(r["converged"] for r in rows)
    eta = [r["efficiency"] for r in rows]
    assert all(a >= b for a, b in zip(eta, eta[1:]))


if __name__ == "__main__":
    import pytest
    pytest.main([__file__, "-v"])
