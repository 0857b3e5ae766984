from __future__ import annotations

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hamstat.cli import dumps, main, parse_grid
from hamstat.fieldio import read_field, write_field
from hamstat.fields import Grid, ScalarField


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def report(out):
    return json.loads((out / "report.json").read_text())


def test_parse_grid():
    g = parse_grid("2:64,32:0,1,-1,1")
    assert g.shape == (64, 32) and g.lower.tolist() == [0.0, -1.0]
    assert parse_grid("2:9:0,1,0,1").shape == (9, 9)
    for bad in ("2:9", "x:9:0,1", "2:9,9:0,1"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_dumps_is_sorted_and_full_precision():
    text = dumps({"b": 0.1, "a": [1, math.inf], "c": None, "d": True})
    assert text.index('"a"') < text.index('"b"')
    back = json.loads(text)
    assert back["b"] == 0.1 and back["a"][1] == "inf" and back["d"] is True


def test_eval_examples(tmp_path):
    code, out = run(tmp_path, "eval", "--preset", "quad:1,1", "--grid", "2:64:0,1,0,1")
    assert code == 0
    assert report(out)["volume"] == pytest.approx(2.0, abs=1e-10)
    assert {p.name for p in out.iterdir()} == {"report.json", "theta.fld", "sqrt_det_g.fld",
                                                "mean_curvature_norm.fld"}
    code, out = run(tmp_path, "eval", "--preset", "zero", "--grid", "2:32:0,1,0,1", name="zero")
    assert code == 0 and report(out)["volume"] == pytest.approx(1.0, abs=1e-12)
    assert np.all(read_field(out / "theta.fld").values == 0.0)
    code, out = run(tmp_path, "eval", "--preset", "cubic1d", name="cubic")
    assert report(out)["volume"] == pytest.approx(1.147793, abs=1e-4)


def test_eval_from_file_and_formats(tmp_path):
    g = Grid.box([0.0, 0.0], [1.0, 1.0], [16, 16])
    src = tmp_path / "u.fld"
    write_field(ScalarField.from_function(g, lambda x: 0.5 * np.sum(x * x, -1)), src)
    code, out = run(tmp_path, "eval", "--in", str(src), "--format", "csv", "--K", "0")
    assert code == 0
    assert (out / "theta.csv").read_text().startswith("x0,x1,value")
    assert "k_convexity.value" in (out / "report.csv").read_text()
    code, out = run(tmp_path, "eval", "--in", str(src), "--format", "json", name="j")
    assert sorted(p.name for p in out.iterdir()) == ["report.json"]
    assert "theta" in report(out)["fields"]


@pytest.mark.parametrize("args, expected", [
    (["eval", "--in", "missing.fld"], 2),
    (["eval", "--preset", "nonsense"], 2),
    (["eval", "--preset", "quad:1,1", "--grid", "2:1:0,1,0,1"], 3),
    (["optimize", "--preset", "quad:1,1", "--step", "0"], 3),
    (["variation", "--preset", "quad:1,1", "--grid", "2:33:0,1,0,1", "--eta", "quad:1,1"], 3),
    (["rotate", "--preset", "quad:-3,-3", "--grid", "2:17:-1,1,-1,1", "--sigma", "0.785"], 4),
    (["rotate", "--preset", "quad:1,1", "--sigma", "2"], 3),
    (["ellipticity", "--c", "0.1", "--seed", "0", "--samples", "0"], 3),
    (["ellipticity", "--c", "0.1"], 3),
])
def test_exit_codes(tmp_path, args, expected, capsys):
    code, _ = run(tmp_path, *args)
    assert code == expected
    assert capsys.readouterr().err.startswith("hamstat:")


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["eval", "--format", "xml"])
    assert info.value.code == 2


def test_malformed_field_file_exit_2(tmp_path):
    bad = tmp_path / "bad.fld"
    bad.write_text("{}\n1\n")
    assert main(["eval", "--in", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_refusal_names_violating_pair(tmp_path, capsys):
    run(tmp_path, "rotate", "--preset", "quad:-3,-3", "--grid", "2:17:-1,1,-1,1", "--sigma", "0.785")
    assert "violating pair [[" in capsys.readouterr().err


def test_variation_examples(tmp_path):
    code, out = run(tmp_path, "variation", "--preset", "quad:1,2", "--grid", "2:33:-1,1,-1,1")
    r = report(out)["coarse"]
    assert code == 0 and abs(r["divergence_form"]) < 1e-8 and abs(r["phase_form"]) < 1e-8
    code, out = run(tmp_path, "variation", "--preset", "harmonic2d+bump:0.1", "--grid", "2:33:-1,1,-1,1",
                    "--eta", "zero", name="z")
    r = report(out)["coarse"]
    assert r["divergence_form"] == 0.0 and r["phase_form"] == 0.0
    code, out = run(tmp_path, "variation", "--preset", "cubic1d", "--grid", "1:129:0,1", "--refine", name="r")
    rep = report(out)
    assert rep["fine"]["shape"] == [257] and rep["gap_ratio"] > 3.5


def test_optimize_examples(tmp_path):
    code, out = run(tmp_path, "optimize", "--preset", "quad:1,1", "--grid", "2:21:0,1,0,1", "--tol", "1e-8")
    r = report(out)
    assert code == 0 and r["iterations"] == 0
    final = read_field(out / "u_final.fld").values
    x = Grid.box([0.0, 0.0], [1.0, 1.0], [21, 21]).coords()
    assert np.array_equal(final, 0.5 * np.sum(x * x, -1))
    code, out = run(tmp_path, "optimize", "--preset", "harmonic2d+bump:0.05", "--grid", "2:21:-1,1,-1,1",
                    "--iters", "50", name="h")
    r = report(out)
    assert r["F_monotone"] and r["residual_final"] < r["residual_initial"]
    assert len((out / "trace.csv").read_text().splitlines()) == r["iterations"] + 2


def test_rotate_examples(tmp_path):
    code, out = run(tmp_path, "rotate", "--preset", "quad:1,1", "--grid", "2:17:-1,1,-1,1",
                    "--sigma", str(math.pi / 4), "--roundtrip", "--kappa", "0.78")
    assert code == 0
    r = report(out)
    assert r["monotonicity"]["value"] >= 0
    assert np.max(np.abs(read_field(out / "ubar.fld").values)) < 1e-8
    assert r["roundtrip"]["max_error"] < 1e-8
    assert r["convexity_propagation"]["value"] >= 0
    assert (out / "graph.csv").exists() and (out / "recovered.fld").exists()


def test_ellipticity_examples(tmp_path):
    code, out = run(tmp_path, "ellipticity", "--c", "0", "--seed", "0", "--samples", "100")
    assert code == 0 and report(out)["margin"] == 1.0
    code, out = run(tmp_path, "ellipticity", "--find-c", "--seed", "3", "--samples", "1000", name="f")
    r = report(out)
    assert r["c"] > 0 and r["seed"] == 3


def test_reports_are_byte_identical(tmp_path):
    args = ["rotate", "--preset", "harmonic2d", "--grid", "2:17:-1,1,-1,1", "--sigma", "0.3", "--seed", "4"]
    _, a = run(tmp_path, *args, name="a")
    _, b = run(tmp_path, *args, name="b")
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hamstat", "eval", "--preset", "zero", "--grid",
                           "2:8:0,1,0,1", "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["volume"] == pytest.approx(1.0)
