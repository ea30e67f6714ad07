import json
from pathlib import Path

import numpy as np
import pytest

from msdiff.cli import main
from msdiff.config import load_config, parse_config
from msdiff.errors import ParseError, ValidationError
from msdiff.runner import run_scenario


def base_doc(**overrides):
    doc = {
        "mixture": {
            "n": 2,
            "alpha": 1.0,
            "K": [[None, 2.0], [None, None]],
            "bounds": {"c_min": 0.5, "c_max": 1.5, "T_min": 0.5, "T_max": 1.5},
        },
        "grid": {"d": 1, "cells": [32], "lengths": [1.0]},
        "initial": {
            "species": [
                {"preset": "cosine", "mean": 0.5, "amplitude": 0.05, "mode": 1},
                {"preset": "uniform", "value": 0.5},
            ],
            "temperature": {"preset": "uniform", "value": 1.0},
        },
        "time": {"t_end": 0.005, "cfl_safety": 0.9},
    }
    doc.update(overrides)
    return doc


def write_doc(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestLoadConfig:
    def test_minimal_fills_defaults(self, tmp_path):
        cfg = load_config(write_doc(tmp_path, base_doc()))
        assert cfg.concentration_scheme == "explicit"
        assert cfg.temperature_scheme == "characteristics"
        assert cfg.mixture.K.tolist() == [[0.0, 2.0], [2.0, 0.0]]
        assert cfg.snapshot_times == () and cfg.every_n_steps is None

    def test_asymmetric_table_names_field(self, tmp_path):
        doc = base_doc()
        doc["mixture"]["K"] = [[0, 1.0], [1.0000001, 0]]
        with pytest.raises(ValidationError) as err:
            load_config(write_doc(tmp_path, doc))
        assert "mixture.K[0][1]" in str(err.value)

    def test_unknown_key_rejected(self, tmp_path):
        doc = base_doc()
        doc["mixture"]["alpha2"] = 3.0
        with pytest.raises(ParseError) as err:
            load_config(write_doc(tmp_path, doc))
        assert "alpha2" in str(err.value)

    def test_unknown_preset_key_rejected(self, tmp_path):
        doc = base_doc()
        doc["initial"]["temperature"] = {"preset": "uniform", "value": 1.0, "mode": 2}
        with pytest.raises(ParseError):
            load_config(write_doc(tmp_path, doc))

    def test_missing_section(self, tmp_path):
        doc = base_doc()
        del doc["time"]
        with pytest.raises(ValidationError):
            load_config(write_doc(tmp_path, doc))

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(ParseError) as err:
            load_config(path)
        assert "line" in str(err.value)

    def test_both_dt_and_cfl_rejected(self):
        doc = base_doc()
        doc["time"] = {"t_end": 1.0, "dt": 1e-4, "cfl_safety": 0.9}
        with pytest.raises(ValidationError):
            parse_config(doc)

    def test_snapshot_times_outside_horizon(self):
        doc = base_doc(output={"snapshot_times": [9.0]})
        with pytest.raises(ValidationError):
            parse_config(doc)

    def test_negative_coefficient_path(self, tmp_path):
        doc = base_doc()
        doc["mixture"]["K"] = [[None, -2.0], [None, None]]
        with pytest.raises(ValidationError):
            load_config(write_doc(tmp_path, doc))


class TestRunCommand:
    def test_clean_run_writes_outputs(self, tmp_path):
        doc = base_doc(output={"snapshot_times": [0.0, 0.0025, 0.005]})
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        cfg_path = write_doc(tmp_path, doc)
        out_dir = tmp_path / "out"
        rc = main(["run", "--config", str(cfg_path), "--out-dir", str(out_dir)])
        assert rc == 0
        names = sorted(p.name for p in out_dir.iterdir())
        assert "diagnostics.csv" in names
        assert "snap_t0.csv" in names and "snap_t0.005.csv" in names
        header = (out_dir / "diagnostics.csv").read_text().splitlines()[0]
        assert header == (
            "t,dt,mass_1,mass_2,ctot_min,ctot_max,T_min,T_max,"
            "min_re_eig_TB,flux_residual,closure_residual,neg_events"
        )
        snap_header = (out_dir / "snap_t0.csv").read_text().splitlines()[0]
        assert snap_header == "x,c_1,c_2,c_tot,T"

    def test_diagnostics_cover_every_step(self, tmp_path):
        doc = base_doc()
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        cfg = load_config(write_doc(tmp_path, doc))
        result = run_scenario(cfg, write=False)
        times = result.diagnostics.t
        assert len(times) > 10
        assert all(t1 > t0 for t0, t1 in zip(times, times[1:]))
        assert times[-1] == pytest.approx(cfg.t_end)

    def test_strict_cfl_violation_exits_2(self, tmp_path):
        doc = base_doc()
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        doc["time"] = {"t_end": 0.01, "dt": 0.002}
        cfg_path = write_doc(tmp_path, doc)
        rc = main(
            ["run", "--config", str(cfg_path), "--out-dir", str(tmp_path / "o"),
             "--strict"]
        )
        assert rc == 2
        diag = (tmp_path / "o" / "diagnostics.csv").read_text().splitlines()
        assert len(diag) == 2  # header plus the flagged step

    def test_every_n_steps_snapshots(self, tmp_path):
        doc = base_doc(output={"every_n_steps": 10})
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        cfg_path = write_doc(tmp_path, doc)
        out_dir = tmp_path / "outn"
        rc = main(["run", "--config", str(cfg_path), "--out-dir", str(out_dir)])
        assert rc == 0
        snaps = [p for p in out_dir.iterdir() if p.name.startswith("snap_")]
        assert len(snaps) >= 2

    def test_missing_output_dir_is_usage_error(self, tmp_path):
        cfg_path = write_doc(tmp_path, base_doc())
        assert main(["run", "--config", str(cfg_path)]) == 1

    def test_uniform_scenario_rests(self, tmp_path):
        doc = base_doc()
        doc["initial"]["species"] = [
            {"preset": "uniform", "value": 0.5},
            {"preset": "uniform", "value": 0.5},
        ]
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        doc["time"] = {"t_end": 0.002, "cfl_safety": 0.9}
        cfg = load_config(write_doc(tmp_path, doc))
        result = run_scenario(cfg, write=False)
        assert result.exit_status == 0
        diag = result.diagnostics
        assert all(v == 1.0 for v in diag.ctot_min)
        assert all(v == 1.0 for v in diag.ctot_max)
        assert all(v == 0.0 for v in diag.flux_residual)
        assert all(v == 0 for v in diag.neg_events)
        np.testing.assert_array_equal(
            result.final_state.c_prime, 0.5 * np.ones((1, 32))
        )


class TestVerifyCommand:
    def test_spectra_suite_passes(self, capsys):
        rc = main(["verify", "spectra", "--samples", "40"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "spectra,result,PASS" in out

    def test_conjugation_suite_passes(self, capsys):
        rc = main(["verify", "conjugation", "--samples", "40"])
        assert rc == 0
        assert "conjugation,result,PASS" in capsys.readouterr().out

    def test_unknown_suite_is_usage_error(self):
        assert main(["verify", "nonsense"]) == 1

    def test_seed_changes_sampling_not_outcome(self, capsys):
        assert main(["verify", "spectra", "--samples", "25", "--seed", "7"]) == 0


class TestConvergeCommand:
    def test_self_convergence_table(self, tmp_path, capsys):
        doc = base_doc()
        doc["grid"] = {"d": 1, "cells": [16], "lengths": [1.0]}
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        doc["time"] = {"t_end": 0.004, "cfl_safety": 0.9}
        cfg_path = write_doc(tmp_path, doc)
        rc = main(
            ["converge", "--config", str(cfg_path), "--levels", "3",
             "--out-dir", str(tmp_path / "conv")]
        )
        assert rc == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "dx,dt,error,observed_order"
        table = (tmp_path / "conv" / "convergence.csv").read_text().splitlines()
        assert len(table) == 3  # header + two comparable levels
        errs = [float(line.split(",")[2]) for line in table[1:]]
        assert errs[1] < errs[0]

    def test_too_few_levels_usage_error(self, tmp_path):
        cfg_path = write_doc(tmp_path, base_doc())
        assert main(["converge", "--config", str(cfg_path), "--levels", "1"]) == 1


class TestReproducibility:
    def test_byte_identical_reruns(self, tmp_path):
        doc = base_doc(output={"snapshot_times": [0.0025, 0.005]})
        doc["schemes"] = {"concentration": "explicit", "temperature": "upwind"}
        cfg_path = write_doc(tmp_path, doc)
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            assert main(["run", "--config", str(cfg_path), "--out-dir", str(d)]) == 0
        for p in dirs[0].iterdir():
            assert p.read_bytes() == (dirs[1] / p.name).read_bytes()
