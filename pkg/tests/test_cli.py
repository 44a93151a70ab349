from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from nlbvp.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_VALIDATION,
    EXIT_VERDICT,
    ConfigError,
    main,
    parse_config,
)

BASE = """\
# small Dirichlet problem with a manufactured sine solution
domain = interval:0,1
mesh.h = 1/64
f = pi^2*sin(pi*x)
g = 0
delta = 0.08
green.u = x^2
green.v = x
"""


def run(tmp_path, text: str, *args: str) -> tuple[int, object]:
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    out = tmp_path / "out"
    code = main([args[0], "--config", str(cfg), "--out", str(out), *args[1:]])
    return code, out


def test_validate_writes_normalization(tmp_path, capsys):
    code, out = run(tmp_path, BASE, "validate")
    assert code == EXIT_OK
    rows = (out / "normalization.csv").read_text().splitlines()
    assert rows[0] == "x,integral,target,defect" and len(rows) == 51
    man = json.loads((out / "manifest.json").read_text())
    assert man["constants"]["cbar_d_p"] == pytest.approx(1.0)
    assert man["constants"]["rho_scale"] == pytest.approx(2.437439064023, rel=1e-12)
    assert man["constants"]["delta_threshold"] == pytest.approx(1 / 6)
    assert "threshold 0.166667" in capsys.readouterr().out


def test_solve_is_deterministic(tmp_path):
    code, out = run(tmp_path, BASE, "solve")
    assert code == EXIT_OK
    first = (out / "solution.csv").read_bytes()
    man1 = (out / "manifest.json").read_bytes()
    code, out = run(tmp_path, BASE, "solve")
    assert (out / "solution.csv").read_bytes() == first
    assert (out / "manifest.json").read_bytes() == man1
    data = np.loadtxt(out / "solution.csv", delimiter=",", skiprows=1)
    assert data.shape == (65, 3)
    assert np.max(np.abs(data[:, 2] - np.sin(np.pi * data[:, 1]))) < 0.05


def test_horizon_above_threshold_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, BASE.replace("delta = 0.08", "delta = 0.5"), "validate")
    assert code == EXIT_VALIDATION
    assert "1/6" in capsys.readouterr().err


def test_rule_validation_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, BASE + "q = power:2\nsmoothness = 1\n", "validate")
    assert code == EXIT_VALIDATION
    assert "smoothness" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text, needle",
    [
        (BASE + "bogus = 1\n", "unknown key 'bogus'"),
        (BASE + "delta = 0.05\n", "duplicate key 'delta'"),
        (BASE + "this line is wrong\n", "line 9"),
        (BASE.replace("mesh.h = 1/64", "mesh.h = 1/"), "mesh.h"),
        (BASE.replace("f = pi^2*sin(pi*x)", "f = sin(pi*"), "key 'f'"),
    ],
)
def test_config_errors_exit_code(tmp_path, capsys, text, needle):
    code, _ = run(tmp_path, text, "solve")
    assert code == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, BASE + "solver.maxit = 1\n", "solve")
    assert code == EXIT_SOLVER
    assert "stage 'linear solve'" in capsys.readouterr().err


def test_neumann_incompatible_data(tmp_path):
    text = BASE.replace("f = pi^2*sin(pi*x)", "f = 1") + "bc = neumann\n"
    code, _ = run(tmp_path, text, "solve")
    assert code == EXIT_VALIDATION


def test_study_verdict_exit_code(tmp_path):
    # a reference that is not the limit makes the final-error verdict fail
    text = BASE + "study.reference = 2*sin(pi*x)\n"
    code, out = run(tmp_path, text, "study", "--deltas", "0.08,0.04")
    assert code == EXIT_VERDICT
    rows = (out / "study_bvp.csv").read_text().splitlines()
    assert len(rows) == 3


def test_green_second(tmp_path):
    text = BASE.replace("delta = 0.08", "delta = 0.12") + "lambda = smoothed:0.1\ngreen.v = 1\n"
    text = text.replace("green.v = x\n", "")
    code, out = run(tmp_path, text, "green", "--which", "second")
    assert code == EXIT_OK
    header, row = (out / "green_second.csv").read_text().splitlines()
    assert header == "lhs,rhs,a_delta,residual"
    assert float(row.split(",")[3]) < 0.01


def test_normals(tmp_path):
    code, out = run(tmp_path, BASE, "normals")
    assert code == EXIT_OK
    z = np.loadtxt(out / "normal_flux.csv", delimiter=",", skiprows=1)
    assert np.allclose(z[:, 1], -np.pi, rtol=0.02)


def test_parse_config_comments_and_quotes():
    cfg = parse_config('delta = "0.05"  # half\n\n# note\nf = x^2\n')
    assert cfg.number("delta") == 0.05
    assert cfg.lines["f"] == 4
    assert cfg.raw("p") == "2"
    with pytest.raises(ConfigError):
        parse_config("solver.tol = 1\nsolver.tol = 2\n")


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "nlbvp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "validate" in res.stdout


def test_study_four_rows(tmp_path):
    text = BASE + "study.reference = sin(pi*x)\n"
    code, out = run(tmp_path, text, "study", "--deltas", "0.16,0.08,0.04,0.02")
    assert code == EXIT_OK
    rows = (out / "study_bvp.csv").read_text().splitlines()
    assert rows[0].startswith("delta,") and len(rows) == 5
    assert [float(r.split(",")[0]) for r in rows[1:]] == [0.16, 0.08, 0.04, 0.02]


def test_study_schedule_above_threshold(tmp_path, capsys):
    code, _ = run(tmp_path, BASE, "study", "--deltas", "0.3,0.1")
    assert code == EXIT_VALIDATION
    assert "1/6" in capsys.readouterr().err
