import json

import numpy as np
import pytest

from talenti_lab.cli import dispatch
from talenti_lab.experiments import psi_cutoff
from talenti_lab.grid import RadialField, RadialGrid, SpaceTimeField, TimeGrid
from talenti_lab.io import load_field, save_field


@pytest.fixture
def psi_file(tmp_path):
    path = tmp_path / "psi.csv"
    save_field(psi_cutoff().on(RadialGrid(1.0, 2, 48)), path)
    return path


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_exits_two(capsys):
    assert dispatch(["compare", "--frobnicate", "a", "b"]) == 2
    assert "usage" in capsys.readouterr().err


def test_compare_reflexive(tmp_path, psi_file, capsys):
    assert dispatch(["compare", str(psi_file), str(psi_file)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["dominates"] is True and out["margin"] == 0.0


def test_missing_input_exit_two(tmp_path):
    assert dispatch(["compare", str(tmp_path / "nope.csv"), str(tmp_path / "nope.csv")]) == 2


def test_malformed_input_exit_two(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# R=1 d=2 T=1 n_t=0 n_r=2 kind=state\n1,oops\n")
    assert dispatch(["rearrange", str(bad), "--out", str(tmp_path / "o.csv")]) == 2
    assert not (tmp_path / "o.csv").exists()


def test_optimize_solve_rearrange_adjoint(tmp_path, psi_file):
    f_out, rep = tmp_path / "f.csv", tmp_path / "rep.json"
    assert dispatch(["optimize", "--terminal", str(psi_file), "--volume", "0.3", "--nt", "32",
                     "--out", str(f_out), "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert {"c", "objective", "radius_curve", "feasibility_residual"} <= set(report)
    assert 0 < report["c"] < 1
    f = load_field(f_out)
    assert f.kind == "control" and f.values.shape == (33, 48)

    u_out = tmp_path / "u.csv"
    assert dispatch(["solve", str(f_out), "--out", str(u_out)]) == 0
    assert load_field(u_out).values.min() >= 0.0

    s_out = tmp_path / "us.csv"
    assert dispatch(["rearrange", str(u_out), "--out", str(s_out)]) == 0
    assert np.all(np.diff(load_field(s_out).values, axis=1) <= 0)

    p_out = tmp_path / "p.csv"
    assert dispatch(["adjoint", str(psi_file), "--T", "0.5", "--nt", "8", "--out", str(p_out)]) == 0
    p = load_field(p_out)
    assert p.kind == "adjoint" and p.tgrid.T == 0.5


def test_solve_rejects_radial_source(tmp_path, psi_file):
    assert dispatch(["solve", str(psi_file), "--out", str(tmp_path / "u.csv")]) == 2


def test_optimize_bad_volume(tmp_path, psi_file):
    assert dispatch(["optimize", "--terminal", str(psi_file), "--volume", "1.5",
                     "--out", str(tmp_path / "f.csv")]) == 2


def test_optimize_non_monotone_terminal(tmp_path):
    g = RadialGrid(1.0, 2, 8)
    path = tmp_path / "up.csv"
    save_field(RadialField(g, np.linspace(0, 1, 8)), path)
    assert dispatch(["optimize", "--terminal", str(path), "--volume", "0.3",
                     "--out", str(tmp_path / "f.csv")]) == 2
    assert not (tmp_path / "f.csv").exists()


def test_unwritable_output_dir(tmp_path, psi_file):
    assert dispatch(["rearrange", str(psi_file), "--out", str(tmp_path / "missing" / "o.csv")]) == 2


def test_counterexample_small_grid_reports_failure(tmp_path):
    # too coarse in time: invariants fail, exit 4
    out = tmp_path / "r.json"
    assert dispatch(["experiment", "counterexample", "--nr", "32", "--nt", "64", "--out", str(out)]) == 4
    assert not json.loads(out.read_text())["invariants"]["margins_exceed_10x_duality_gap"]


def test_counterexample_config_and_profiles(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_r": 64, "n_t": 32768, "seed": 1}))
    prof = tmp_path / "prof"
    prof.mkdir()
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    for out in (out1, out2):
        assert dispatch(["experiment", "counterexample", "--config", str(cfg), "--out", str(out),
                         "--profiles-dir", str(prof)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    data = json.loads(out1.read_text())
    assert {"c_phi", "c_psi", "control_distance", "cross_objectives"} <= set(data)
    assert data["config"]["n_t"] == 32768
    assert sorted(p.name for p in prof.iterdir()) == ["concentration_profiles.csv", "radius_curves.csv"]
    header = (prof / "radius_curves.csv").read_text().splitlines()[0]
    assert header == "t,r_phi,r_psi"


def test_bad_config_exit_two(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"V0_fraction": 2.0}))
    out = tmp_path / "r.json"
    assert dispatch(["experiment", "counterexample", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_talenti_experiment_stdout(capsys):
    assert dispatch(["experiment", "talenti", "--samples", "2", "--nr", "32", "--nt", "32"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["all_hold"] is True
    assert "Talenti" in captured.err


def test_sweep_command(tmp_path):
    out = tmp_path / "s.json"
    assert dispatch(["experiment", "sweep", "--nr", "64", "--nt", "2048", "--samples", "2",
                     "--out", str(out)]) == 0
    assert json.loads(out.read_text())["all_falsified"] is True


def test_compare_space_time_level(tmp_path, capsys):
    g, t = RadialGrid(1.0, 2, 4), TimeGrid(1.0, 2)
    a = SpaceTimeField(g, t, np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0]], dtype=float))
    b = SpaceTimeField(g, t, np.zeros((3, 4)))
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    save_field(a, pa)
    save_field(b, pb)
    assert dispatch(["compare", str(pa), str(pb), "--level", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["dominates"] is False
    assert dispatch(["compare", str(pa), str(pb), "--level", "7"]) == 2
