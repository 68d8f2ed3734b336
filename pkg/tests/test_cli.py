import csv
import hashlib
import json

import numpy as np
import pytest

from nls3lab import cli
from nls3lab.linearized import read_coo


def run(tmp_path, *args, config=None, name="out"):
    argv = list(args) + ["--out", str(tmp_path / name)]
    if config is not None:
        p = tmp_path / f"{name}.cfg"
        p.write_text(config)
        argv += ["--config", str(p)]
    return cli.main(argv), tmp_path / name


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_ground_state_outputs(tmp_path):
    code, out = run(tmp_path, "ground-state")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert set(rep) == {"K", "P", "E", "nehari", "delta_signed", "delta_abs", "charge12", "charge13", "gn_ratio"}
    assert abs(rep["K"] - 4 * rep["P"]) / rep["K"] < 1e-5
    assert (out / "ground_state.csv").read_text().startswith("r,re_c1,im_c1,re_c2,im_c2,re_c3,im_c3\n")
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and man["command"] == "ground-state"
    assert man["config"]["n"] == "4096"
    assert man["grids"]["main"]["fingerprint"]
    assert man["outputs"]["report.json"] == digest(out / "report.json")
    assert {"artifact", "numpy", "scipy", "python"} <= set(man["versions"])


def test_pohozaev_for_two_mass_triples(tmp_path):
    for i, m in enumerate(("1,1,3", "1,1,1")):
        code, out = run(tmp_path, "ground-state", "--masses", m, name=f"m{i}")
        rep = json.loads((out / "report.json").read_text())
        assert code == 0 and abs(rep["K"] - 4 * rep["P"]) / rep["K"] < 1e-5


@pytest.mark.parametrize(
    "cmd,extra,files",
    [
        ("ground-state", [], ["report.json", "ground_state.csv", "manifest.json"]),
        ("evolve", ["--n", "256"], ["trace.csv", "final.csv", "summary.json", "manifest.json"]),
        ("modulate", ["--n", "256", "--seed", "3"], ["modulation.csv", "modulation_summary.json", "manifest.json"]),
    ],
)
def test_determinism(tmp_path, cmd, extra, files):
    cfg = "t_end = 0.5\n"
    c1, a = run(tmp_path, cmd, *extra, config=cfg, name="a")
    c2, b = run(tmp_path, cmd, *extra, config=cfg, name="b")
    assert c1 == c2 == 0
    for f in files:
        if f == "manifest.json":
            ma, mb = (json.loads((d / f).read_text()) for d in (a, b))
            assert ma["outputs"] == mb["outputs"] and ma["config"] == mb["config"]
        else:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_coarse_ground_state_is_falsified(tmp_path):
    # the identity gap at n=512 exceeds the 1e-5 tolerance, still written out
    code, out = run(tmp_path, "ground-state", "--n", "512")
    assert code == cli.EXIT_FALSIFIED
    assert (out / "report.json").exists()


def test_malformed_config(tmp_path, capsys):
    code, out = run(tmp_path, "ground-state", config="n = 512\nwhat = 1\n")
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert ":2: unknown key 'what'" in err


def test_bad_masses_flag(tmp_path, capsys):
    code, _ = run(tmp_path, "ground-state", "--masses", "1,2")
    assert code == cli.EXIT_CONFIG
    assert "--masses" in capsys.readouterr().err


def test_spectrum_refuses_small_n(tmp_path, capsys):
    code, out = run(tmp_path, "spectrum", "--n", "32")
    assert code == cli.EXIT_CONFIG
    assert "n >= 64" in capsys.readouterr().err
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == cli.EXIT_CONFIG


def test_spectrum_outputs(tmp_path):
    code, out = run(tmp_path, "spectrum", "--n", "256")
    assert code == 0
    s = json.loads((out / "spectrum.json").read_text())
    assert s["lambda1"] > 0 and s["witness"] < 0
    assert max(s["residual_r"], s["residual_i"]) < 1e-6
    assert len(s["convergence"]["lambda1"]) == 3
    A = read_coo(out / "L_R.coo")
    assert A.shape == (3 * 256, 3 * 256)


def test_evolve_blowup_marker(tmp_path):
    code, out = run(tmp_path, "evolve", "--n", "256", config="amplitude = 1.1\nt_end = 30\ndt = 0.02\n")
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "blowup-detected" and s["t_star"] > 0
    assert "blow-up" in (out / "K.svg").read_text()


def test_evolve_from_snapshot(tmp_path):
    from nls3lab.radial import make_grid, save_snapshot
    from nls3lab.states import ground_state
    from nls3lab.radial import MassTriple

    g = make_grid(np.inf, 128, L=6.0)
    snap = tmp_path / "u0.bin"
    save_snapshot(snap, ground_state(MassTriple(1, 1, 3), g).Qvec * 0.5)
    code, out = run(tmp_path, "evolve", config=f"initial = file\ninitial_file = {snap}\nt_end = 0.2\n")
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["grids"]["main"]["n"] == 128


def test_evolve_missing_initial_file(tmp_path):
    code, _ = run(tmp_path, "evolve", "--n", "64", config="initial = file\ninitial_file = /nonexistent.csv\n")
    assert code == cli.EXIT_CONFIG


def test_virial_scan_outputs(tmp_path):
    cfg = "triples = 1,1,1; 1,1,3; 2,1,3; 1,2,1\nscan_t_end = 0.05\n"
    code, out = run(tmp_path, "virial-scan", "--n", "512", config=cfg)
    assert code == 0
    rows = list(csv.reader((out / "virial_scan.csv").open()))
    assert rows[0] == ["m1", "m2", "m3", "paper_condition", "galilean_condition", "defect_V", "defect_I"]
    assert len(rows) == 5
    s = json.loads((out / "scan_summary.json").read_text())
    assert s["winner"] == "galilean"
    assert s["F_inf_rel_gap"] < 1e-12
    assert (out / "virial_heatmap.svg").read_text().startswith("<svg")


def test_virial_scan_stationary(tmp_path):
    cfg = "triples = 1,1,3; 1,1,1\nscan_t_end = 0.05\nscan_initial = ground-state\n"
    code, out = run(tmp_path, "virial-scan", "--n", "512", config=cfg)
    assert code == 0
    for row in json.loads((out / "scan_summary.json").read_text())["rows"]:
        assert row["max_abs_dVdt"] < 1e-7


def test_virial_scan_empty_lattice(tmp_path):
    code, _ = run(tmp_path, "virial-scan", config="triples = ;\n")
    assert code == cli.EXIT_CONFIG


def test_special_stationary(tmp_path):
    code, out = run(tmp_path, "special", "--n", "256", config="a = 0\nforward_periods = 1\n")
    assert code == 0
    rep = json.loads((out / "scenario.json").read_text())
    assert rep["a"] == 0 and rep["backward"] == {}
    assert rep["label"].startswith("diagnostic")


def test_special_blowup_backward(tmp_path):
    cfg = "a = 1\nforward_periods = 3\nbackward_n = 512\nbackward_t_end = 200\nbackward_dt = 0.1\n"
    code, out = run(tmp_path, "special", "--n", "256", config=cfg)
    assert code == 0
    rep = json.loads((out / "scenario.json").read_text())
    assert rep["backward"]["status"] == "blowup-detected"
    assert "blow-up" in (out / "K.svg").read_text()
    assert (out / "delta_decay.svg").exists() and (out / "backward_trace.csv").exists()


@pytest.mark.parametrize(
    "exc,code",
    [
        (cli.Falsified("x"), cli.EXIT_FALSIFIED),
        (FloatingPointError("x"), cli.EXIT_NUMERICAL),
        (np.linalg.LinAlgError("x"), cli.EXIT_NUMERICAL),
        (RuntimeError("x"), cli.EXIT_NUMERICAL),
        (ValueError("x"), cli.EXIT_CONFIG),
    ],
)
def test_exit_code_mapping(tmp_path, monkeypatch, exc, code):
    def boom(run):
        raise exc

    monkeypatch.setitem(cli.COMMANDS, "ground-state", boom)
    got, out = run(tmp_path, "ground-state", "--n", "64")
    assert got == code
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == code


def test_falsified_modulation(tmp_path):
    # a huge perturbation pushes the datum out of the modulation tube
    code, _ = run(tmp_path, "modulate", "--n", "128", config="epsilon = 5\nt_end = 0.1\n")
    assert code in (cli.EXIT_NUMERICAL, cli.EXIT_CONFIG, cli.EXIT_FALSIFIED)
    assert code != 0
