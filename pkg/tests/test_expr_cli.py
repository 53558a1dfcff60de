import json
import math
import subprocess
import sys

import numpy as np
import pytest

from subvarlap.cli import parse_config, run
from subvarlap.expr import ExpressionError, parse_expression

XY = ("x", "y")


def pts(*cols):
    return np.stack([np.asarray(c, dtype=float) for c in cols], axis=-1)


def test_expression_arithmetic():
    e = parse_expression("1.5 + 0.5*sin(pi*x) - y**2", XY)
    P = pts([0.5, 0.0], [1.0, 2.0])
    np.testing.assert_allclose(e(P), [1.5 + 0.5 - 1, 1.5 - 4])
    assert parse_expression("2", XY)(P).shape == (2,)
    np.testing.assert_array_equal(parse_expression("step(x - 0.25)", XY)(P), [1, 0])
    np.testing.assert_allclose(parse_expression("max(x, y) + pow(e, 0)", XY)(P), [2, 3])


@pytest.mark.parametrize("text, col", [
    ("foo(x)", 1),
    ("x + w", 5),
    ("__import__('os')", 1),
    ("x.real", 1),
    ("sin(x, y)", 1),
    ("x +", None),
])
def test_expression_rejects(text, col):
    # columns are 1-based
    with pytest.raises(ExpressionError) as info:
        parse_expression(text, XY, line=3)
    assert info.value.line == 3
    if col is not None:
        assert info.value.col == col


def test_parse_config():
    cfg = parse_config("# comment\ngroup = h1\n  exponent =  1.5 + x  # trailing\n")
    assert cfg["group"] == ("h1", 2, 9)
    assert cfg["exponent"] == ("1.5 + x", 3, 15)
    for bad in ("nonsense\n", "colour = red\n", "seed = 1\nseed = 2\n"):
        with pytest.raises(Exception):
            parse_config(bad)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


POINCARE_CFG = """group = r2
resolution = 16
seed = 7
exponent = 1.4 + 0.2*sin(3*x)
weight = 1 + x**2
count = 6
"""


def test_poincare_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, "p.cfg", POINCARE_CFG)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(["poincare", "--config", str(cfg), "--out", str(out)]) == 0
        outs.append(out)
    assert (outs[0] / "poincare.csv").read_bytes() == (outs[1] / "poincare.csv").read_bytes()
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["summary"]["resolutions"] == [[16, 16], [32, 32]]
    assert "poincare.csv" in man["artifacts"]


def test_gate_failure_exit_two(tmp_path, capsys):
    cfg = write(tmp_path, "gate.cfg", "group = r2\nresolution = 16\nexponent = 2.5\n")
    code = run(["poincare", "--config", str(cfg), "--out", str(tmp_path / "o"), "--mode", "zero"])
    assert code == 2
    assert "gate failed: p+ < Q/m" in capsys.readouterr().err


def test_config_error_exit_one_with_position(tmp_path, capsys):
    cfg = write(tmp_path, "bad.cfg", "group = r2\nfunction = 1 + blah(x)\n")
    assert run(["norm", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "bad.cfg:2:16:" in capsys.readouterr().err
    cfg = write(tmp_path, "res.cfg", "resolution = 4\nfunction = x\n")
    assert run(["norm", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_norm_command(tmp_path):
    # f = 2, p = 1 on [0, 1/2] and 2 on (1/2, 1]: modular 3, norm 2
    cfg = write(tmp_path, "n.cfg", "group = r1\nresolution = 64\nfunction = 2\nexponent = 1 + step(x - 0.5)\n")
    out = tmp_path / "o"
    assert run(["norm", "--config", str(cfg), "--out", str(out)]) == 0
    rows = dict(line.split(",") for line in (out / "norm.csv").read_text().splitlines()[1:])
    assert float(rows["modular"]) == pytest.approx(3.0)
    assert float(rows["luxemburg"]) == pytest.approx(2.0)


def test_solve_artifacts(tmp_path):
    cfg = write(tmp_path, "s.cfg", "group = r2\nresolution = 12\nnodal = true\nexponent = 2 + 0.2*x\nsource = 1\n")
    out = tmp_path / "o"
    assert run(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["status"] == "converged"
    assert diag["p_minus"] == pytest.approx(2.0) and diag["p_plus"] == pytest.approx(2.2)
    trace = np.loadtxt(out / "energy_trace.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(trace[:, 2]) <= 0)
    sol = np.loadtxt(out / "solution.csv", delimiter=",", skiprows=1)
    assert sol.shape == (13 * 13, 3) and math.isfinite(sol[:, 2].max())


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "g.cfg", "group = h1\nresolution = 12\n")
    out = tmp_path / "o"
    res = subprocess.run([sys.executable, "-m", "subvarlap", "geometry", "--config", str(cfg), "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["Q"] == 4 and man["summary"]["quasi_triangle_K"] <= 1 + 1e-12
