import json
import math
import subprocess
import sys

import numpy as np
import pytest

from circlegibbs.cli import COMMANDS, main

COS = {"kind": "cosine_xy", "alpha": 0.0, "gamma": 0.0}
COS_G = {"kind": "cosine_xy", "alpha": 0.0, "gamma": 0.5}

CONFIGS = {
    "spectrum": {"potential": COS, "grid_n": 256, "beta_sweep": [1.0, 2.0]},
    "markov": {"potential": COS_G, "grid_n": 64, "beta": 1.0,
               "cylinders": [[[0.0, 3.14159], [0.0, 3.14159]], [[1.0, 2.0], [0.0, 6.28318], [2.0, 3.0]]]},
    "sample": {"potential": COS_G, "grid_n": 64, "beta": 1.0, "n_steps": 500, "seed": 9},
    "pressure": {"potential": COS_G, "grid_n": 64, "beta_sweep": [0.5, 1.0, 2.0], "workers": 2},
    "subaction": {"potential": COS_G, "grid_n": 64, "method": "lp_dual"},
    "zerotemp": {"potential": COS, "grid_n": 64},
    "ldp": {"potential": COS, "grid_n": 128, "beta_sweep": [10, 20, 40]},
    "dlr": {"potential": COS_G, "grid_n": 64, "beta": 1.0, "n": 30, "boundaries": [0.0, math.pi]},
    "vanenter": {"epsilon": 0.1, "delta": 0.01, "j_max": 6, "j_start": 2},
}


def run(tmp_path, command, cfg, name="run", extra=()):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(cfg_path), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# circlegibbs ")
    header = lines[1].split(",")
    rows = [[float(v) if v not in ("true", "false") else v == "true" for v in l.split(",")] for l in lines[2:]]
    return header, rows


@pytest.mark.parametrize("command", COMMANDS)
def test_every_command_runs_and_is_deterministic(tmp_path, command):
    code1, out1 = run(tmp_path, command, CONFIGS[command], "a")
    code2, out2 = run(tmp_path, command, CONFIGS[command], "b")
    assert code1 == 0 and code2 == 0
    files = sorted(p.name for p in out1.iterdir())
    assert files and files == sorted(p.name for p in out2.iterdir())
    for f in files:
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes()
        text = (out1 / f).read_text()
        if f.endswith(".csv"):
            assert text.startswith("# circlegibbs command=" + command)
            assert "config_sha256=" in text.splitlines()[0]
        else:
            assert json.loads(text)["metadata"]["command"] == command


def test_spectrum_values(tmp_path):
    _, out = run(tmp_path, "spectrum", CONFIGS["spectrum"])
    header, rows = read_csv(out / "spectral.csv")
    assert header == ["beta", "lambda", "log_lambda", "gap_ratio"]
    assert abs(rows[0][1] - 1.26606587775) < 1e-9
    header, rows = read_csv(out / "eigfun.csv")
    assert header == ["angle", "psi", "psi_bar", "theta"] and len(rows) == 256


def test_spectrum_zero_potential(tmp_path):
    _, out = run(tmp_path, "spectrum", {"potential": {"kind": "symmetric_u", "u": "zero"}, "grid_n": 32,
                                        "beta_sweep": [0.5, 1, 3]})
    _, rows = read_csv(out / "spectral.csv")
    assert all(r[1] == pytest.approx(1.0, abs=1e-15) for r in rows)


def test_pressure_zero_residual(tmp_path):
    code, out = run(tmp_path, "pressure", {"potential": {"kind": "symmetric_u", "u": "zero"}, "grid_n": 32})
    assert code == 0
    _, rows = read_csv(out / "pressure.csv")
    assert rows[0][4] == 0.0


def test_sample_seed_override(tmp_path):
    _, a = run(tmp_path, "sample", CONFIGS["sample"], "a", ["--seed", "1"])
    _, b = run(tmp_path, "sample", CONFIGS["sample"], "b", ["--seed", "2"])
    assert (a / "chain.csv").read_text() != (b / "chain.csv").read_text()
    header, rows = read_csv(a / "chain.csv")
    assert header == ["step", "angle"] and len(rows) == 500


def test_zerotemp_cosine(tmp_path):
    code, out = run(tmp_path, "zerotemp", CONFIGS["zerotemp"])
    assert code == 0
    rep = json.loads((out / "zerotemp.json").read_text())
    assert rep["m_value"] == pytest.approx(1.0)
    assert rep["diagnostics"]["m_dual_lp"] == pytest.approx(1.0, abs=1e-9)
    assert set(rep) >= {"m_value", "residual", "method", "diagnostics"}
    assert rep["diagnostics"]["m_half_grid"] == pytest.approx(1.0)


def test_zerotemp_zero(tmp_path):
    code, out = run(tmp_path, "zerotemp", {"potential": {"kind": "symmetric_u", "u": "zero"}, "grid_n": 32})
    assert code == 0
    assert json.loads((out / "zerotemp.json").read_text())["m_value"] == 0.0
    _, rows = read_csv(out / "subaction.csv")
    assert all(r[1] == 0.0 for r in rows)


def test_zerotemp_disagreement_exit_code(tmp_path, monkeypatch):
    from circlegibbs import zerotemp
    real = zerotemp.dual_value
    monkeypatch.setattr(zerotemp, "dual_value",
                        lambda *a, **k: real(*a, **k) if k.get("return_f") else 5.0)
    code, _ = run(tmp_path, "zerotemp", CONFIGS["zerotemp"])
    assert code == 1


def test_ldp_table(tmp_path):
    _, out = run(tmp_path, "ldp", CONFIGS["ldp"])
    _, rows = read_csv(out / "ldp.csv")
    errs = [abs(r[2] - r[3]) for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert json.loads((out / "ldp.json").read_text())["subaction_method_distance"] < 1e-4


def test_dlr_boundaries(tmp_path):
    code, out = run(tmp_path, "dlr", CONFIGS["dlr"])
    assert code == 0
    rep = json.loads((out / "dlr.json").read_text())
    assert rep["max_boundary_difference"] < rep["bound"]
    assert rep["max_boundary_difference"] < 1e-6


def test_vanenter_outputs(tmp_path):
    code, out = run(tmp_path, "vanenter", CONFIGS["vanenter"])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["verdict"] == "no-selection-demonstrated"
    assert set(cert) >= {"epsilon", "delta", "j_max", "ferro_masses", "antiferro_masses", "verdict"}
    header, rows = read_csv(out / "schedule.csv")
    assert header == ["j", "beta_j", "concentration", "pass"] and all(r[3] for r in rows)
    assert read_csv(out / "rings.csv")[0] == ["j", "c_j", "log_width"]
    assert read_csv(out / "masses.csv")[0] == ["beta", "j", "log_mass"]


def test_vanenter_from_first_ring_is_inconclusive(tmp_path):
    cfg = dict(CONFIGS["vanenter"], j_start=1)
    code, out = run(tmp_path, "vanenter", cfg)
    assert code == 1
    assert json.loads((out / "certificate.json").read_text())["verdict"] == "inconclusive"


def test_vanenter_large_delta_inconclusive(tmp_path):
    code, out = run(tmp_path, "vanenter", dict(CONFIGS["vanenter"], delta=0.6))
    assert code == 1
    assert json.loads((out / "certificate.json").read_text())["verdict"] == "inconclusive"


def test_malformed_json_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"epsilon": 0.1,,}')
    assert main(["vanenter", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"potential": COS, "grid_n": 100},
    {"potential": COS, "grid_n": 8192},
    {"potential": {"kind": "nope"}, "grid_n": 64},
    {"grid_n": 64},
    {"potential": COS, "grid_n": 64, "beta": "hot"},
    {"potential": COS, "grid_n": 64, "beta": 800.0},
])
def test_config_errors_exit_2(tmp_path, cfg):
    assert run(tmp_path, "spectrum", cfg)[0] == 2


def test_missing_config_file(tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "none.json")]) == 2


def test_tabulated_path_relative_to_config(tmp_path):
    from circlegibbs.potentials import write_table_csv
    x = 2 * np.pi * np.arange(32) / 32
    write_table_csv(tmp_path / "pot.csv", np.cos(x[None, :] - x[:, None]))
    code, out = run(tmp_path, "spectrum", {"potential": {"kind": "tabulated", "path": "pot.csv"}, "grid_n": 32})
    assert code == 0
    _, rows = read_csv(out / "spectral.csv")
    assert rows[0][1] == pytest.approx(1.26606587775, abs=1e-9)


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(CONFIGS["vanenter"]))
    res = subprocess.run([sys.executable, "-m", "circlegibbs", "vanenter", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0
