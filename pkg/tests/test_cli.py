import json
import subprocess
import sys
import textwrap

import pytest

from plapsolve.cli import ConfigError, load_config, main, parse_config

BASE = """
p = 2.0
a_expr = "{a}"
f_expr = "{f}"
{level}
seed = 7

[manifold]
dim = 3
shape = [{n}, {n}, {n}]
lengths = [1.0, 1.0, 1.0]

[f_growth]
rho = {rho}
b = 1.0
c = {c}
"""


def write_config(tmp_path, name="run.toml", a="2", f="t", level="R = 0.5", n=4, rho="1.0", c="0.0", extra=""):
    path = tmp_path / name
    path.write_text(BASE.format(a=a, f=f, level=level, n=n, rho=rho, c=c) + textwrap.dedent(extra))
    return path


CRITICAL = dict(f="t + abs(t)^4*t", rho='"critical"', c="2.0", level="nu = 1.0", a="1")


def test_solve_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("result.json", "u.csv", "trace.csv", "plot.py"):
        assert (out / name).exists()
    result = json.loads((out / "result.json").read_text())
    assert result["result"]["lambda"] == pytest.approx(2.0, abs=1e-8)
    sha = load_config(cfg).sha256
    assert sha in json.dumps(result)
    for name in ("u.csv", "trace.csv"):
        assert sha in (out / name).read_text().splitlines()[0]


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, a="2 + sin(2*pi*x1)")
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b")])
    for name in ("result.json", "u.csv", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_mode_mismatch_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["continue", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "f_growth.rho" in capsys.readouterr().err
    crit = write_config(tmp_path, "crit.toml", **CRITICAL)
    assert main(["solve", "--config", str(crit), "--out", str(tmp_path / "o")]) == 1
    assert "f_growth.rho" in capsys.readouterr().err


@pytest.mark.parametrize(
    "kw, field",
    [
        (dict(f="t +"), "f_expr"),
        (dict(a="2 + t"), "a_expr"),
        (dict(a="x4"), "a_expr"),
        (dict(level="R = -1.0"), "R"),
        (dict(level="R = 0.5\nnu = 1.0"), "R"),
        (dict(rho='"fast"'), "f_growth.rho"),
        (dict(extra="[solver]\nbogus = 1\n"), "solver.bogus"),
        (dict(extra="colour = 3\n"), "f_growth.colour"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, kw, field):
    cfg = write_config(tmp_path, **kw)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert field in capsys.readouterr().err


def test_p_out_of_range():
    with pytest.raises(ConfigError) as info:
        parse_config({"manifold": {"dim": 3, "shape": [4, 4, 4], "lengths": [1, 1, 1]}, "p": 3.0,
                      "a_expr": "1", "f_expr": "t", "R": 1.0, "f_growth": {"rho": 1.0, "b": 1.0}})
    assert info.value.field == "p"


def test_broken_toml(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("p = = 2\n")
    assert main(["solve", "--config", str(bad)]) == 1
    assert main(["solve", "--config", str(tmp_path / "missing.toml")]) == 1


def test_not_converged_exit_code(tmp_path):
    cfg = write_config(tmp_path, a="2 + sin(2*pi*x1)", extra="[solver]\nmax_iter = 1\n")
    result_dir = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(result_dir)]) == 2
    assert json.loads((result_dir / "result.json").read_text())["result"]["status"] == "max_iter"


def test_continue_mode(tmp_path):
    cfg = write_config(tmp_path, n=6, extra="[continuation]\nm_schedule = [1, 2, 4]\n", **CRITICAL)
    out = tmp_path / "o"
    assert main(["continue", "--config", str(cfg), "--out", str(out)]) == 0
    result = json.loads((out / "result.json").read_text())
    assert [r["m"] for r in result["continuation"]["rows"]] == [1, 2, 4]
    assert (out / "trace.csv").read_text().count("\n") == 5


def test_oracle_mode(tmp_path):
    cfg = write_config(tmp_path, n=3, a="2 + sin(2*pi*x1)", extra="[oracle]\nrestarts = 1\n")
    out = tmp_path / "o"
    assert main(["oracle", "--config", str(cfg), "--out", str(out)]) == 0
    gap = json.loads((out / "result.json").read_text())["gap"]
    assert {"mu_solver", "mu_oracle", "abs", "allowed"} <= set(gap)
    assert gap["abs"] <= gap["allowed"]


def test_oracle_mesh_guard(tmp_path, capsys):
    cfg = write_config(tmp_path, n=6)
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "manifold.shape" in capsys.readouterr().err


def test_verify_mode(tmp_path):
    cfg = write_config(tmp_path, a="2 + sin(2*pi*x1)", extra="[verify]\ncount = 40\n")
    out = tmp_path / "o"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.glob("verify_*.json"))
    assert "verify_lemma1.json" in names and "verify_claim1_streamed.json" in names
    summary = json.loads((out / "result.json").read_text())
    assert summary["failed"] == []


def test_seed_override_and_module_entry(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    proc = subprocess.run(
        [sys.executable, "-m", "plapsolve", "solve", "--config", str(cfg), "--out", str(out), "--seed", "11"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "seed=11" in (out / "u.csv").read_text().splitlines()[0]
