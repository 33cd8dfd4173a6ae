import csv
import json
import textwrap
from pathlib import Path

import pytest

from regenpoisson.cli import main
from regenpoisson.config import build_chain, build_function, load_config
from regenpoisson.errors import ConfigError

COIN = """
[chain]
name = two_state
a = 0.5
b = 0.5

[function]
kind = indicator
states = 1

[solve]
z = 0
method = all

[mc]
seed = 7
cycles = 2000
replications = 200
horizon = 200
n_max = 10000
"""

BD = """
[chain]
name = birth_death
p = 0.3

[function]
kind = identity

[truncation]
size = 64
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def cli(tmp_path, command, text, *extra, out="out"):
    cfg = write(tmp_path, text)
    return main([command, "--config", str(cfg), "--out-dir", str(tmp_path / out), *extra])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_config_errors_carry_line_numbers(tmp_path):
    path = write(tmp_path, "[chain]\nname = two_state\njunk line\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_config(path)
    with pytest.raises(ConfigError, match="line 3"):
        load_config(text="[chain]\nname = two_state\nname = birth_death\n")
    with pytest.raises(ConfigError, match="unknown"):
        load_config(text="[chain]\nname = two_state\n[bogus]\nx = 1\n")
    cfg = load_config(text="[chain]\nname = two_state\na = -2\n")
    with pytest.raises(ValueError):
        build_chain(cfg)
    with pytest.raises(ConfigError):
        build_function(load_config(text="[chain]\nname = two_state\n[function]\nkind = spline\n"))


def test_bad_config_exits_with_input_error(tmp_path, capsys):
    assert cli(tmp_path, "validate", "[chain]\nname = two_state\nnot a pair\n") == 1
    assert "line 3" in capsys.readouterr().err
    assert cli(tmp_path, "solve", "[chain]\nname = nonsense\n") == 1
    assert main(["solve"]) == 1


def test_validate_and_stationary(tmp_path):
    assert cli(tmp_path, "validate", COIN) == 0
    assert cli(tmp_path, "stationary", COIN) == 0
    table = rows(tmp_path / "out" / "stationary.csv")
    assert table[0] == ["state", "pi", "closed_form"]
    assert float(table[1][1]) == pytest.approx(0.5)
    meta = json.loads((tmp_path / "out" / "stationary.json").read_text())
    assert meta["config"]["chain"]["name"] == "two_state"
    assert {"numpy", "scipy", "python"} <= set(meta["versions"])


def test_solve_all_methods(tmp_path):
    assert cli(tmp_path, "solve", COIN) == 0
    table = rows(tmp_path / "out" / "solve.csv")
    assert table[0] == ["state", "g_gz", "g_direct", "g_gstar", "residual_gz", "residual_direct", "residual_gstar"]
    assert [float(v) for v in table[2][1:3]] == [1.0, 1.0]
    # floats are written with 17 significant digits
    assert all(len(v.replace("-", "").replace(".", "").lstrip("0")) <= 17 for v in table[2][1:])
    pairs = {r[0]: float(r[1]) for r in rows(tmp_path / "out" / "solve_pairs.csv")[1:]}
    assert pairs["gz-direct"] == pytest.approx(0.0, abs=1e-12)


def test_solve_single_method_and_truncation_override(tmp_path):
    assert cli(tmp_path, "solve", BD, "--method", "direct", "--trunc-size", "32") == 0
    table = rows(tmp_path / "out" / "solve.csv")
    assert float(table[1 + 3][1]) == pytest.approx(15.0, abs=1e-8)


def test_moments(tmp_path):
    assert cli(tmp_path, "moments", BD) == 0
    table = {r[0]: r for r in rows(tmp_path / "out" / "moments.csv")[1:]}
    assert float(table["pi_f"][1]) == pytest.approx(0.75, abs=1e-9)
    assert float(table["sigma2_cycle"][1]) == pytest.approx(float(table["sigma2_inner"][1]), rel=1e-9)


def test_lyapunov_modes(tmp_path):
    drift = BD + "\n[lyapunov]\nmode = drift\nK = 0\nv = 0, 2.5\nw = 1\n"
    assert cli(tmp_path, "lyapunov", drift) == 0
    assert "verified" in (tmp_path / "out" / "lyapunov.txt").read_text()
    bad = BD + "\n[lyapunov]\nmode = drift\nK = 0\nv = 0, 1\nw = 0, 1\n"
    assert cli(tmp_path, "lyapunov", bad) == 2
    queue = BD + "\n[lyapunov]\nmode = queue\n"
    assert cli(tmp_path, "lyapunov", queue) == 0
    meta = json.loads((tmp_path / "out" / "lyapunov.json").read_text())
    assert meta["K"] == list(range(9)) and meta["squared_cycle_moment"] <= meta["bound"]
    coin_queue = COIN + "\n[lyapunov]\nmode = queue\n"
    assert cli(tmp_path, "lyapunov", coin_queue) == 1


def test_monte_carlo_needs_seed(tmp_path, capsys):
    no_seed = COIN.replace("seed = 7\n", "")
    assert cli(tmp_path, "simulate", no_seed) == 1
    assert "seed" in capsys.readouterr().err
    assert cli(tmp_path, "simulate", no_seed, "--seed", "3") == 0


def test_simulate_covers_exact_values(tmp_path):
    assert cli(tmp_path, "simulate", COIN) == 0
    table = {r[0]: r for r in rows(tmp_path / "out" / "simulate.csv")[1:]}
    assert table["sum_f"][-1] == "true"


def test_clt_is_deterministic(tmp_path):
    assert cli(tmp_path, "clt", COIN, out="a") == 0
    assert cli(tmp_path, "clt", COIN, out="b") == 0
    assert (tmp_path / "a" / "clt.csv").read_bytes() == (tmp_path / "b" / "clt.csv").read_bytes()
    assert cli(tmp_path, "clt", COIN, "--seed", "8", out="c") == 0
    assert (tmp_path / "a" / "clt.csv").read_bytes() != (tmp_path / "c" / "clt.csv").read_bytes()


def test_lil_writes_trajectory(tmp_path):
    code = cli(tmp_path, "lil", COIN)
    assert code in (0, 2)
    table = rows(tmp_path / "out" / "lil.csv")
    assert table[0] == ["n", "L", "running_sup"]
    assert len(table) <= 501


def test_triplet_and_function_files(tmp_path):
    (tmp_path / "k.csv").write_text("row,col,prob\n0,1,1.0\n1,0,0.5\n1,1,0.5\n")
    (tmp_path / "f.csv").write_text("state,value\n0,2.0\n1,-1.0\n")
    text = "[chain]\nname = triplets\npath = k.csv\n\n[function]\nkind = csv\npath = f.csv\n"
    assert cli(tmp_path, "stationary", text) == 0
    table = rows(tmp_path / "out" / "stationary.csv")
    assert [float(r[1]) for r in table[1:]] == pytest.approx([1 / 3, 2 / 3])
    assert cli(tmp_path, "solve", text + "\n[solve]\nmethod = direct\n") == 0
    (tmp_path / "k.csv").write_text("row,col,prob\n0,x,1.0\n")
    assert cli(tmp_path, "stationary", text) == 1


def test_output_dir_relative_to_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    sub = tmp_path / "cfgs"
    sub.mkdir()
    cfg = write(sub, COIN + "\n[output]\ndir = results\n")
    assert main(["stationary", "--config", str(cfg)]) == 0
    assert (sub / "results" / "stationary.csv").exists()


def test_demo_example1(tmp_path):
    assert main(["demo-example1", "--out-dir", str(tmp_path)]) == 0
    checks = {(r[0], r[1]): r for r in rows(tmp_path / "demo-example1_checks.csv")[1:]}
    assert all(r[-1] == "true" for r in checks.values())
    seq = rows(tmp_path / "demo-example1.csv")
    assert seq[0] == ["n", "stopped_abs_gz", "stopped_abs_gz_plus_h", "survival"] and len(seq) == 62


def test_demo_example2_reports_divergence(tmp_path, capsys):
    assert main(["demo-example2", "--out-dir", str(tmp_path), "--horizon", "4000"]) == 0
    meta = json.loads((tmp_path / "demo-example2.json").read_text())
    assert meta["verdict"].startswith("diverges")
    assert meta["tail_slope"] == pytest.approx(-0.5, abs=0.05)
    assert Path(tmp_path / "demo-example2.csv").exists()
