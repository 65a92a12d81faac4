import csv
import json

import pytest

from liftlab.cli import main
from liftlab.config import ConfigError, ExperimentConfig, parse_config

CONFIG = """\
[experiment]
command = relax-scan
seed = 11

[sampler]
name = srw-uniform, hmc-verlet(0.25)
gamma = preset
gamma_c = 2.0

[grid]
n = 8, 16, 32, 64

[run]
horizon_factor = 500
replicas = 3
observable = mode(2)
"""


def _files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"}


def test_config_roundtrip():
    cfg = parse_config(CONFIG, "a.ini")
    assert cfg.samplers == ["srw-uniform", "hmc-verlet(0.25)"]
    assert cfg.n_grid == [8, 16, 32, 64] and cfg.gamma_c == 2.0
    again = parse_config(cfg.to_ini())
    assert again == cfg
    assert parse_config(ExperimentConfig().to_ini()) == ExperimentConfig()


def test_config_errors_carry_line_numbers():
    bad = CONFIG.replace("replicas = 3", "replicas = three")
    with pytest.raises(ConfigError, match=r"a.ini:15:"):
        parse_config(bad, "a.ini")
    with pytest.raises(ConfigError, match=r":6:.*unknown key"):
        parse_config(CONFIG.replace("name =", "nmae ="), "b.ini")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[plots]\nx = 1\n")
    cfg = parse_config(CONFIG.replace("n = 8, 16, 32, 64", "n = 2"), "c.ini")
    with pytest.raises(ConfigError, match=r"c.ini:11:"):
        cfg.validate()


def test_config_gamma_presets():
    cfg = parse_config(CONFIG)
    assert cfg.gamma_for("srw-uniform", 16) == 0.125
    assert cfg.gamma_for("srw-neighbor", 16) == pytest.approx(2 / 64)
    assert cfg.gamma_for("hmc-exact", 16) == 0.125
    assert cfg.gamma_for("srw", 16) == 0.0


def test_sample_is_byte_identical(tmp_path):
    argv = ["sample", "--sampler", "srw", "--n", "8", "--horizon", "1e4", "--seed", "7"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b and "trajectory_r0.csv" in a
    header = a["trajectory_r0.csv"].decode().splitlines()[0]
    assert header.startswith("t,x,")


def test_sample_preset_recorded(tmp_path):
    out = tmp_path / "p"
    code = main(["sample", "--sampler", "srw-uniform", "--gamma", "preset", "--n", "16", "--horizon", "100",
                 "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["cells"][0]["gamma"] == 0.0625
    assert manifest["schema_version"] == 1 and manifest["master_seed"] == "0"
    assert set(manifest["outputs"]) == set(_files(out))


@pytest.mark.parametrize("argv", [
    ["sample", "--sampler", "srw", "--n", "8", "--horizon", "0"],
    ["relax-scan", "--sampler", "ou", "--n-grid", ""],
    ["sample", "--sampler", "srw", "--n", "8", "--gamma", "fast"],
    ["sample", "--sampler", "teleport", "--n", "8"],
    ["verify-lift", "--n", "128"],
])
def test_config_errors_exit_two(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_compare_mismatched_grids(tmp_path):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text("[sampler]\nname = ecmc, hmc-verlet\n[grid]\nn = 8, 16, 32, 64\n"
                       "[compare]\necmc_n = 8, 16, 32, 64\nhmc_n = 8, 16, 32\n")
    assert main(["compare", "--config", str(cfgfile), "--out", str(tmp_path / "o")]) == 2


def test_relax_scan_too_short_horizon(tmp_path):
    code = main(["relax-scan", "--sampler", "srw", "--n-grid", "8,16,32,64", "--horizon", "10",
                 "--out", str(tmp_path)])
    assert code == 2


def test_relax_scan_writes_rows_and_footer(tmp_path):
    out = tmp_path / "r"
    assert main(["relax-scan", "--sampler", "ou", "--n-grid", "8,16,32,64", "--replicas", "2",
                 "--horizon-factor", "400", "--seed", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert [r["n"] for r in rows[:4]] == ["8", "16", "32", "64"]
    assert rows[-1]["method"] == "scaling_fit"
    assert 2.5 < float(rows[-1]["rate"]) < 3.5


def test_verify_corrupted_rates_exit_four(tmp_path):
    argv = ["verify-invariant", "--n", "4", "--mc-budget", "20000", "--horizon", "2e4", "--corrupt-rates",
            "--out", str(tmp_path)]
    assert main(argv) == 4
    rows = list(csv.reader((tmp_path / "verify-invariant.csv").open()))
    assert any(r[-1] == "FAIL" and r[3] == "invariance" for r in rows[1:])


def test_verify_lift_linear_checks(tmp_path):
    main(["verify-lift", "--n", "4", "--mc-budget", "20000", "--out", str(tmp_path)])
    rows = list(csv.DictReader((tmp_path / "verify-lift.csv").open()))
    linear = [r for r in rows if r["family"] == "linear" and r["method"] == "analytic"]
    assert linear and all(r["passed"] == "pass" for r in linear)


def test_replay_reproduces_digests(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["sample", "--sampler", "hmc-exact", "--gamma", "preset", "--n", "8", "--horizon", "50",
                 "--replicas", "2", "--out", str(out)]) == 0
    assert main(["replay", str(out / "manifest.json")]) == 0
    text = capsys.readouterr().out
    assert "4 of 4 outputs identical" in text and "mismatch" not in text


def test_workers_do_not_change_outputs(tmp_path, monkeypatch):
    argv = ["relax-scan", "--sampler", "ou", "--n-grid", "8,16,32,64", "--replicas", "2", "--horizon-factor",
            "200"]
    assert main(argv + ["--workers", "1", "--out", str(tmp_path / "w1")]) == 0
    monkeypatch.setenv("LIFTLAB_WORKERS", "2")
    assert main(argv + ["--out", str(tmp_path / "w2")]) == 0
    m2 = json.loads((tmp_path / "w2" / "manifest.json").read_text())
    assert m2["config"]["workers"] is None
    assert (tmp_path / "w1" / "results.csv").read_bytes() == (tmp_path / "w2" / "results.csv").read_bytes()


@pytest.mark.parametrize("sampler", ["srw-uniform", "ecmc(quartic)", "ou", "hmc-exact"])
def test_sample_start_option(tmp_path, sampler):
    base = ["sample", "--sampler", sampler, "--gamma", "0.5", "--n", "6", "--horizon", "20"]
    assert main(base + ["--out", str(tmp_path / "c")]) == 0
    assert main(base + ["--start", "stationary", "--out", str(tmp_path / "s")]) == 0
    cold = list(csv.reader((tmp_path / "c" / "trajectory_r0.csv").open()))[1]
    warm = list(csv.reader((tmp_path / "s" / "trajectory_r0.csv").open()))[1]
    header = list(csv.reader((tmp_path / "c" / "trajectory_r0.csv").open()))[0]
    obs_cols = [i for i, h in enumerate(header) if h.startswith("obs_")]
    assert all(float(cold[i]) == 0.0 for i in obs_cols)
    assert any(float(warm[i]) != 0.0 for i in obs_cols)
    assert "x" not in header or cold[header.index("x")] == "0"


def test_start_validation(tmp_path):
    with pytest.raises(ConfigError, match="start"):
        parse_config("[run]\nstart = lukewarm\n").validate()
