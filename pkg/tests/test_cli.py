import csv
import json
from pathlib import Path

import numpy as np
import pytest

from qjump import cli, physics, simulate as sim


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_config(path, obj):
    path.write_text(json.dumps(obj))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def output_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.name != cli.MANIFEST}


def test_transmission_three_curves(tmp_path):
    assert run("transmission", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "transmission.csv")
    assert sorted({float(r["g_eff_mhz"]) for r in rows}) == [8.0, 9.0, 10.0]
    p = physics.CavityParams.bonn()
    r = next(r for r in rows if float(r["g_eff_mhz"]) == 9.0 and float(r["delta_mhz"]) == 50.0)
    t1 = physics.transmission_one_atom(p, physics.DetuningPoint(physics.mhz(50.0), physics.mhz(9.0)))
    assert float(r["t1"]) == pytest.approx(float(t1), rel=1e-12)
    m = json.loads((tmp_path / cli.MANIFEST).read_text())
    assert m["command"] == "transmission" and m["seed"] == 0 and "version" in m
    assert m["config"]["cavity"]["g0_mhz"] == 13.1


def test_transmission_grid_and_ridge(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"delta_mhz": [100.0, 200.0, 300.0],
                                             "dy_um": {"start": 0, "stop": 20, "num": 5}})
    assert run("transmission", "--config", cfg, "--out", tmp_path / "o") == 0
    grid_rows = read_csv(tmp_path / "o" / "level_difference_grid.csv")
    assert len(grid_rows) == 15
    ridge = read_csv(tmp_path / "o" / "optimal_ridge.csv")
    assert float(ridge[-1]["dy_opt_um"]) == 0.0  # beyond the zero-offset threshold
    assert float(ridge[0]["dy_opt_um"]) > 0.0


def test_empty_grid_is_rejected_before_writing(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"delta_mhz": []})
    out = tmp_path / "o"
    assert run("transmission", "--config", cfg, "--out", out) == 2
    assert "delta_mhz" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"detuning": [1.0]})
    assert run("transmission", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "detuning" in capsys.readouterr().err


def test_simulate_writes_records_and_trajectories(tmp_path):
    assert run("simulate", "--repetitions", 3, "--duration-ms", 200, "--seed", 5, "--out", tmp_path) == 0
    recs = sorted(tmp_path.glob("clicks_*.txt"))
    assert len(recs) == 3 and len(list(tmp_path.glob("trajectory_*.txt"))) == 3
    rec = sim.read_clicks(recs[0])
    assert rec.duration == pytest.approx(0.2)
    assert 200 < len(rec) < 6000
    m = json.loads((tmp_path / cli.MANIFEST).read_text())
    assert m["seed"] == 5 and m["config"]["repetitions"] == 3 and m["rng"] == sim.RNG_ALGORITHM


def test_zero_repetitions_is_an_error(tmp_path):
    assert run("simulate", "--repetitions", 0, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


def test_invalid_spec_keys(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"model": "two_atom", "rates_per_s": {"r10": 1.0},
                                             "flux_per_ms": [27, 17, 8]})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "rates_per_s" in capsys.readouterr().err


def test_split_and_two_atom_configs(tmp_path):
    cfg = write_config(tmp_path / "s.json", {
        "repetitions": 1, "duration_ms": 100,
        "split": {"alpha": 1, "site_flux_per_ms": [1.0, 6.0], "hop_rate_per_s": 100.0}})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "s") == 0
    traj = sim.parse_trajectory((tmp_path / "s" / "trajectory_0000.txt").read_text())
    assert traj.initial_state.alpha == 1
    cfg = write_config(tmp_path / "t.json", {
        "model": "two_atom", "repetitions": 2, "duration_ms": 100,
        "rates_per_s": {"r10": 104, "r21": 52, "r_rep": 45}, "flux_per_ms": [27, 17, 8.5]})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "t") == 0
    traj = sim.parse_trajectory((tmp_path / "t" / "trajectory_0000.txt").read_text())
    assert traj.initial_state.alpha == 2


@pytest.fixture(scope="module")
def one_atom_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--repetitions", 4, "--duration-ms", 500, "--seed", 1, "--out", d) == 0
    return d


def test_analyze_all_one_atom_outputs(one_atom_dir, tmp_path):
    cfg = write_config(tmp_path / "a.json", {
        "inputs": [str(one_atom_dir)], "rates_per_s": {"r10": 40, "r01": 18}, "flux_per_ms": [27, 3],
        "initial": [0, 1], "entropy_bins_ms": {"start": 0.1, "stop": 10, "num": 4, "log": True}})
    out = tmp_path / "o"
    assert run("analyze", "--config", cfg, "--hist", "--g2", "--filter", "--entropy-scan", "--fit-rates",
               "--out", out) == 0
    names = {p.name for p in out.iterdir()}
    assert {"histogram.csv", "g2.csv", "g2_fit.json", "entropy_scan.csv", "rate_fit.json",
            "filter_0000.csv", "filter_0003.csv", cli.MANIFEST} <= names
    hist = read_csv(out / "histogram.csv")
    assert sum(float(r["prob"]) for r in hist) == pytest.approx(1.0)
    probs = np.loadtxt(out / "filter_0000.csv", delimiter=",", comments="#", skiprows=4)
    assert np.allclose(probs[:, 1:].sum(axis=1), 1.0)
    assert len(read_csv(out / "entropy_scan.csv")) == 4
    fit = json.loads((out / "rate_fit.json").read_text())
    assert fit["r10"] + fit["r01"] == pytest.approx(58, rel=0.3)
    m = json.loads((out / cli.MANIFEST).read_text())
    assert len(m["inputs"]) == 4 and all(len(h) == 64 for h in m["inputs"].values())


def test_analyze_bin_zero_is_an_error(one_atom_dir, tmp_path, capsys):
    assert run("analyze", "--inputs", one_atom_dir, "--hist", "--bin-ms", 0, "--out", tmp_path / "o") == 2
    assert "bin_ms" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_analyze_needs_a_toggle(one_atom_dir, tmp_path):
    assert run("analyze", "--inputs", one_atom_dir, "--out", tmp_path / "o") == 2


def test_analyze_rejects_wrong_format_version(tmp_path, capsys):
    bad = tmp_path / "clicks_0000.txt"
    bad.write_text("#clicks v2 duration_s=1.0\n0.1\n")
    assert run("analyze", "--inputs", bad, "--hist", "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "v2" in err or "format" in err


def test_hmm_missing_input_is_an_error(tmp_path, capsys):
    assert run("hmm", "--inputs", tmp_path / "nope.txt", "--out", tmp_path / "o") == 2
    assert "nope.txt" in capsys.readouterr().err


def test_hmm_fixed_order_two(one_atom_dir, tmp_path):
    out = tmp_path / "o"
    assert run("hmm", "--inputs", one_atom_dir, "--orders", 2, "--restarts", 2, "--out", out) == 0
    best = json.loads((out / "best.json").read_text())
    assert best["n_states"] == 2
    model = json.loads((out / "model_n2.json").read_text())
    assert sorted(model["means"]) == pytest.approx([3.0, 27.0], rel=0.1)
    scores = read_csv(out / "scores.csv")
    assert scores[0]["n_params"] == "5"


def test_rerun_is_bit_identical(one_atom_dir, tmp_path):
    first = tmp_path / "a"
    assert run("hmm", "--inputs", one_atom_dir, "--orders", 1, 2, "--restarts", 2, "--seed", 9,
               "--out", first) == 0
    assert run("rerun", first / cli.MANIFEST, "--out", tmp_path / "b") == 0
    assert output_bytes(first) == output_bytes(tmp_path / "b")
    assert (first / cli.MANIFEST).read_bytes() == (tmp_path / "b" / cli.MANIFEST).read_bytes()


def test_rerun_detects_changed_inputs(tmp_path):
    d = tmp_path / "sim"
    assert run("simulate", "--repetitions", 1, "--duration-ms", 100, "--out", d) == 0
    assert run("analyze", "--inputs", d, "--hist", "--out", tmp_path / "a") == 0
    (d / "clicks_0000.txt").write_text((d / "clicks_0000.txt").read_text() + "0.001\n")
    assert run("rerun", tmp_path / "a" / cli.MANIFEST, "--out", tmp_path / "b") == 2


def test_jobs_do_not_change_outputs(tmp_path):
    assert run("simulate", "--repetitions", 4, "--duration-ms", 100, "--seed", 3, "--out", tmp_path / "a") == 0
    assert run("simulate", "--repetitions", 4, "--duration-ms", 100, "--seed", 3, "--jobs", 2,
               "--out", tmp_path / "b") == 0
    assert output_bytes(tmp_path / "a") == output_bytes(tmp_path / "b")


def test_seed_from_config_and_flag_override(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"seed": 11, "repetitions": 1, "duration_ms": 50})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert json.loads((tmp_path / "a" / cli.MANIFEST).read_text())["seed"] == 11
    assert run("simulate", "--config", cfg, "--seed", 12, "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / cli.MANIFEST).read_text())["seed"] == 12
    assert output_bytes(tmp_path / "a") != output_bytes(tmp_path / "b")


def test_negative_seed_is_rejected(tmp_path):
    assert run("simulate", "--seed", -1, "--out", tmp_path / "o") == 2


def test_help_mentions_units(capsys):
    with pytest.raises(SystemExit):
        run("simulate", "--help")
    assert "2*pi*MHz" in capsys.readouterr().out
