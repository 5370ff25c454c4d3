import json

import numpy as np
import pytest

from ssepath import cli
from ssepath.config import parse_config
from ssepath.io import read_array, read_csv, sha256

HOT = ["--T_B", "0.5"]


def invoke(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([name, "--out", str(out), "--seed", "7", *args])
    return code, out


def check_manifest(out):
    man = json.loads((out / "manifest.json").read_text())
    for rel, digest in man["artifacts"].items():
        assert sha256(out / rel) == digest
    files = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert files == set(man["artifacts"])
    return man


def test_simulate_classical_deterministic(tmp_path):
    a, out_a = invoke(tmp_path / "a", "simulate", "--n-steps", "2000")
    b, out_b = invoke(tmp_path / "b", "simulate", "--n-steps", "2000")
    assert a == b == 0
    ma, mb = check_manifest(out_a), check_manifest(out_b)
    assert ma["artifacts"] == mb["artifacts"]
    assert ma["config_hash"] == mb["config_hash"]
    rows = read_csv(out_a / "trajectory.csv")
    assert len(rows) == 21 and float(rows[0]["x"]) == pytest.approx(-4.1833)
    assert parse_config(out_a / "config.toml").digest() == ma["config_hash"]


def test_simulate_other_systems(tmp_path):
    code, out = invoke(tmp_path, "simulate", "--system", "gaussian", "--n-steps", "500")
    assert code == 0 and "var_x" in read_csv(out / "trajectory.csv")[0]
    code, out = invoke(tmp_path / "q", "simulate", "--system", "sse", "--dim", "12",
                       "--n-steps", "300", "--set", "simulate.stride=50")
    assert code == 0
    states, meta = read_array(out / "states.bin")
    assert states.shape == (7, 12) and meta["dim"] == 12
    assert np.allclose(np.linalg.norm(states, axis=1), 1)


def test_tps_outputs(tmp_path):
    code, out = invoke(tmp_path, "tps", *HOT, "--n-moves", "30", "--path-time", "4.0",
                       "--set", "tps.acceptance_floor=0.0")
    assert code == 0
    check_manifest(out)
    assert len(read_csv(out / "moves.csv")) == 30
    assert {r["move"] for r in read_csv(out / "acceptance.csv")} == {"shoot", "mirror"}
    code, out = invoke(tmp_path / "v", "tps", *HOT, "--n-moves", "10", "--path-time", "4.0",
                       "--mode", "visiting", "--set", "tps.acceptance_floor=0.0")
    assert code == 0 and len(read_csv(out / "hb_visiting.csv")) == 4001


@pytest.mark.slow
def test_tis_rate_csv(tmp_path):
    code, out = invoke(tmp_path, "tis", *HOT, "--n-moves", "200", "--pilot-moves", "100")
    assert code == 0
    check_manifest(out)
    q = {r["quantity"] for r in read_csv(out / "rate.csv")}
    assert {"flux0", "P0", "rate"} <= q
    assert len(read_csv(out / "crossing.csv")) >= 1


def test_mfpt_and_analyze(tmp_path):
    dirs = []
    for tb in ("0.5", "0.6", "0.7"):
        code, out = invoke(tmp_path / tb, "mfpt", "--T_B", tb, "--n-trajectories", "10",
                           "--cutoff", "2000")
        assert code == 0
        dirs.append(str(out))
    rate = {r["quantity"]: r for r in read_csv(out / "rate.csv")}
    assert float(rate["rate"]["value"]) > 0
    code, out = invoke(tmp_path, "analyze", "--inputs", *dirs)
    assert code == 0
    rows = read_csv(out / "arrhenius.csv")
    assert len(rows) == 3 and set(rows[0]) == {"T", "inv_T", "ln_k", "ln_k_stderr", "method"}
    assert len(read_csv(out / "arrhenius_fit.csv")) == 1


def test_compare_table(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[compare]\nT_B = [0.5, 0.7, 0.9]\nmethods = ['mfpt']\n"
                   "[mfpt]\nn_trajectories = 10\n")
    code, out = invoke(tmp_path, "compare", "--config", str(cfg))
    assert code == 0
    rates = read_csv(out / "rates.csv")
    assert [float(r["T_B"]) for r in rates] == pytest.approx([0.5, 0.7, 0.9])
    arr = read_csv(out / "arrhenius.csv")
    assert all(r["method"] == "classical-mfpt" for r in arr)
    inv = [float(r["inv_T"]) for r in arr]
    assert inv == sorted(inv, reverse=True)


def test_stationary_and_wigner(tmp_path):
    code, out = invoke(tmp_path, "stationary", "--system", "sse", "--dim", "12", "--T_B", "0.3")
    assert code == 0
    row = read_csv(out / "stationary.csv")[0]
    assert float(row["trace"]) == pytest.approx(1, abs=1e-10)
    code, out = invoke(tmp_path, "wigner", "--system", "sse", "--dim", "30", "--gamma", "0",
                       "--t-end", "2000", "--set", "wigner.nx=41", "--set", "wigner.np=31")
    assert code == 0
    w, meta = read_array(out / "wigner_000.bin")
    assert w.shape == (41, 31) and meta["grid"]["nx"] == 41
    assert len(read_csv(out / "population.csv")) == 3


def test_errors_write_record(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[bath]\nT = 0.3\nT_B = 0.1\n")
    code, out = invoke(tmp_path, "simulate", "--config", str(bad))
    assert code == 2
    rec = json.loads((out / "error.json").read_text())
    assert rec["error"] == "ConfigError" and "line 3" in rec["message"]
    code, out = invoke(tmp_path / "x", "analyze")
    assert code == 1 and json.loads((out / "error.json").read_text())["command"] == "analyze"
    code, out = invoke(tmp_path / "y", "tps", "--system", "gaussian")
    assert code != 0 and (out / "error.json").exists()
