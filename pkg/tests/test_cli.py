import csv
import json

import numpy as np
import pytest

from specinj import cli
from specinj.injector import Configuration
from specinj.xyz import write_xyz


def trajectory(path, n_frames, seed=0, n_atoms=6):
    rng = np.random.default_rng(seed)
    symbols = ["C", "C", "O", "H", "H", "N"][:n_atoms]
    frames = [Configuration(rng.normal(size=(n_atoms, 3)), rng.normal(), rng.normal(size=(n_atoms, 3)), symbols)
              for _ in range(n_frames)]
    write_xyz(path, frames)
    return path


def run(tmp_path, *argv):
    return cli.main([argv[0], "--out-dir", str(tmp_path), *argv[1:]])


def load(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_zero_amplitude_is_identity(tmp_path):
    src = trajectory(tmp_path / "in.xyz", 20)
    code = run(tmp_path, "inject", "--input", str(src), "--amplitude", "0", "--force")
    assert code == cli.EXIT_OK
    assert (tmp_path / "injected.xyz").read_bytes() == src.read_bytes()
    rep = load(tmp_path, "inject.json")
    assert rep["resolved_config"]["amplitude"] == 0.0
    assert rep["eta"] == 0.0


def test_inject_passes_gate_on_large_trajectory(tmp_path):
    src = trajectory(tmp_path / "in.xyz", 3000, seed=1)
    assert run(tmp_path, "inject", "--input", str(src), "--amplitude", "3") == cli.EXIT_OK
    rep = load(tmp_path, "inject.json")
    assert rep["leakage_pass"] is True and rep["rho2_max"] < 0.018
    assert rep["spec"]["l_inj"] == 4
    assert not list(tmp_path.glob("*.partial"))


def test_leakage_breach_exits_and_leaves_partials(tmp_path):
    # a six-frame cycle repeated: validation and test splits see identical series
    trajectory(tmp_path / "cycle.xyz", 6, seed=2)
    src = tmp_path / "in.xyz"
    src.write_text((tmp_path / "cycle.xyz").read_text() * 10)
    assert run(tmp_path, "inject", "--input", str(src)) == cli.EXIT_GATE_LEAKAGE
    assert not (tmp_path / "injected.xyz").exists()
    assert (tmp_path / "injected.xyz.partial").exists()
    err = load(tmp_path, "inject.error.json")
    assert err["exit_code"] == cli.EXIT_GATE_LEAKAGE and err["leakage_pass"] is False


def test_same_seed_same_report(tmp_path):
    src = trajectory(tmp_path / "in.xyz", 30, seed=3)
    run(tmp_path, "inject", "--input", str(src), "--seed", "5", "--force")
    a = (tmp_path / "inject.json").read_bytes()
    b_xyz = (tmp_path / "injected.xyz").read_bytes()
    run(tmp_path, "inject", "--input", str(src), "--seed", "5", "--force")
    assert (tmp_path / "inject.json").read_bytes() == a
    assert (tmp_path / "injected.xyz").read_bytes() == b_xyz
    run(tmp_path, "inject", "--input", str(src), "--seed", "6", "--force")
    assert (tmp_path / "injected.xyz").read_bytes() != b_xyz


def test_degenerate_frame_exit(tmp_path):
    pos = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
    write_xyz(tmp_path / "d.xyz", [Configuration(pos, 0.0, np.zeros((4, 3)))])
    assert run(tmp_path, "inject", "--input", str(tmp_path / "d.xyz"), "--force") == cli.EXIT_DEGENERATE


def test_parse_usage_and_empty_exits(tmp_path):
    bad = tmp_path / "bad.xyz"
    bad.write_text("2\nenergy=1\nC 0 0 0 0 0 0\n")
    assert run(tmp_path, "inject", "--input", str(bad)) == cli.EXIT_PARSE
    empty = tmp_path / "empty.xyz"
    empty.write_text("")
    assert run(tmp_path, "inject", "--input", str(empty)) == cli.EXIT_EMPTY
    src = trajectory(tmp_path / "in.xyz", 5)
    assert run(tmp_path, "inject", "--input", str(src), "--l-inj", "13") == cli.EXIT_USAGE
    assert run(tmp_path, "inject") == cli.EXIT_USAGE
    assert run(tmp_path, "bandwidth", "--input", str(empty)) == cli.EXIT_EMPTY


def test_resource_guard(tmp_path):
    assert run(tmp_path, "grid", "--L", "6", "--d", "6", "--max-ceiling", "99") == cli.EXIT_RESOURCE


def test_grid_single_cell(tmp_path):
    assert run(tmp_path, "grid", "--L", "1", "--d", "2", "--n", "1000", "--l-floor", "0") == cli.EXIT_OK
    rows = (tmp_path / "grid.txt").read_text().splitlines()
    assert len(rows) == 2
    cell = load(tmp_path, "grid.json")["cells"][0]
    # --lmax-extra 3 sweeps l = 0 .. dL + 3
    assert len(cell["fits"]) == 2 + 3 + 1
    assert cell["r2_at"] >= 0.999 and cell["r2_above"] <= 0.06


def test_hardceil(tmp_path):
    assert run(tmp_path, "hardceil", "--n", "1500") == cli.EXIT_OK
    rep = load(tmp_path, "hardceil.json")
    assert rep["mse_within"] <= 1e-8
    assert abs(rep["ratio_above"] - 1) <= 0.05


def diagnose(tmp_path, text, *extra):
    (tmp_path / "d.txt").write_text(text)
    code = run(tmp_path, "diagnose", "--input", str(tmp_path / "d.txt"), "--B", "2000", *extra)
    return code, load(tmp_path, "diagnose.json") if code == 0 else None


def test_diagnose_series(tmp_path):
    code, rep = diagnose(tmp_path, "3 0.73\n4 0.913\n5 0.078\n", "--L", "2", "--d-r", "2")
    assert code == 0
    assert rep["ell_star"] == 4 and rep["xi"] == pytest.approx(11.705, abs=1e-3)
    assert rep["ceiling_match"] is True
    assert "matches the ceiling" in (tmp_path / "diagnose.txt").read_text()


def test_diagnose_triples(tmp_path):
    code, rep = diagnose(tmp_path, "# ell y_low y_arch y_high\n3 0.159 0.136 0.129\n"
                                   "4 0.166 0.134 0.132\n5 0.142 0.141 0.128\n")
    assert code == 0
    rho = [r["rho"] for r in rep["rows"]]
    assert rho == pytest.approx([0.767, 0.941, 0.071], abs=1e-3)
    assert rep["ell_star"] == 4


def test_diagnose_flat_and_fallback(tmp_path):
    code, rep = diagnose(tmp_path, "2 0.5\n3 0.5\n4 0.5\n")
    assert rep["ell_star"] is None and "No cliff" in rep["guidance"]
    code, rep = diagnose(tmp_path, "3 0.20 0.16 0.16\n4 0.10 0.13 0.13\n5 0.10 0.105 0.11\n")
    assert code == 0
    assert all(r["rho"] is None for r in rep["rows"][1:])
    assert rep["warnings"] == []
    code, rep = diagnose(tmp_path, "4 0.1 0.13 0.13\n5 0.1 0.105 0.11\n")
    assert rep["warnings"] and rep["ell_star"] is None
    assert "delta=" in (tmp_path / "diagnose.txt").read_text()


def test_diagnose_parse_error(tmp_path):
    code, _ = diagnose(tmp_path, "3 0.1 0.2\n")
    assert code == cli.EXIT_PARSE


def test_bandwidth_antipodal_and_defaults(tmp_path):
    (tmp_path / "pc.txt").write_text("C 0 0 0\nC 0 0 2\nC 0 0 -2\n")
    assert run(tmp_path, "bandwidth", "--input", str(tmp_path / "pc.txt"), "--B", "1000",
               "--csv", "p.csv") == cli.EXIT_OK
    rep = load(tmp_path, "bandwidth.json")
    assert rep["resolved_config"]["threshold"] == 0.95
    assert rep["resolved_config"]["r_cut"] == 5.0
    assert rep["n_atoms"] == 3
    # the central atom sees an antipodal pair: no odd-degree power
    row = next(csv.DictReader(open(tmp_path / "p.csv")))
    assert row["center"] == "0"
    assert max(float(row[f"w{l}"]) for l in (1, 3, 5, 7, 9)) <= 1e-12


def test_spectrum_command(tmp_path):
    src = trajectory(tmp_path / "in.xyz", 200, seed=4)
    assert run(tmp_path, "spectrum", "--input", str(src), "--L-max", "4") == cli.EXIT_OK
    rep = load(tmp_path, "spectrum.json")
    assert len(rep["power"]) == 5


def test_spn_train_command(tmp_path):
    assert run(tmp_path, "spn-train", "--n", "200", "--epochs", "2", "--hidden", "8") == cli.EXIT_OK
    rep = load(tmp_path, "spn.json")
    assert rep["resolved_config"]["hidden"] == [8]
    assert set(np.load(tmp_path / "spn_params.npz").files)


def test_config_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nseed = 9\n[hardceil]\nn = 1200\nL = 2\n")
    assert run(tmp_path, "hardceil", "--config", str(ini), "--L", "1") == cli.EXIT_OK
    cfg = load(tmp_path, "hardceil.json")["resolved_config"]
    assert (cfg["seed"], cfg["n"], cfg["L"]) == (9, 1200, 1)
    ini.write_text("[hardceil]\nbogus = 1\n")
    assert run(tmp_path, "hardceil", "--config", str(ini)) == cli.EXIT_USAGE
    ini.write_text("[hardceil\n")
    assert run(tmp_path, "hardceil", "--config", str(ini)) == cli.EXIT_PARSE


def test_json_stdout(tmp_path, capsys):
    assert run(tmp_path, "hardceil", "--n", "1200", "--json") == cli.EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["resolved_config"]["command"] == "hardceil"


def test_bad_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "grid", "--nope")
    assert exc.value.code == cli.EXIT_USAGE
