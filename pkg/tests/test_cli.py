import math
import subprocess
import sys

import numpy as np
import pytest

from fvsde.cli import main
from fvsde.config import ConfigError, build_run_config, parse_config_text

HEAT_CFG = """
mesh.nx = 16
mesh.ny = 16
time.N = 64
time.T = 0.1
problem.u0 = cospi
run.seed = 0
"""

MC_CFG = """
mesh.nx = 1
mesh.ny = 1
time.N = 32
time.T = 1.0
problem.g = linear
problem.g.lambda = 0.5
problem.beta = linear
problem.beta.lambda = 0.25
problem.u0 = constant
problem.u0.value = 1.0
run.seed = 42
run.M = 256
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_config_parsing_and_rejections():
    entries = parse_config_text("mesh.nx = 2\nmesh.ny = 2\ntime.N = 4\ntime.T = 1.0\n")
    cfg = build_run_config(entries)
    assert cfg.mesh.n_cells == 4
    assert cfg.grid.dt == 0.25
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("mesh.nz = 2\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("time.N = 2\ntime.N = 3\n")
    with pytest.raises(ConfigError, match="missing"):
        build_run_config(parse_config_text("time.N = 4\ntime.T = 1.0\n"))
    with pytest.raises(ConfigError, match="contraction"):
        build_run_config(parse_config_text(
            "mesh.nx = 2\nmesh.ny = 2\ntime.N = 2\ntime.T = 4.0\n"
            "problem.beta = linear\nproblem.beta.lambda = 0.25\n"
        ))
    with pytest.raises(ConfigError, match="lamda"):
        build_run_config(parse_config_text(
            "mesh.nx = 2\nmesh.ny = 2\ntime.N = 4\ntime.T = 1.0\n"
            "problem.g = linear\nproblem.g.lamda = 0.5\n"
        ))


def test_validate_ok(tmp_path, capsys):
    cfg = write(tmp_path, "heat.cfg", HEAT_CFG)
    assert main(["validate", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "reg = 4.0" in out
    assert "admissibility ok" in out


def test_validate_contraction_violation_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "bad.cfg",
                "mesh.nx = 2\nmesh.ny = 2\ntime.N = 2\ntime.T = 4.0\n"
                "problem.beta = linear\nproblem.beta.lambda = 0.25\n")
    assert main(["validate", "--config", cfg]) == 2
    assert "contraction" in capsys.readouterr().err


def test_validate_broken_mesh_exit_4(tmp_path, capsys):
    mesh_file = tmp_path / "bad.fvmesh"
    mesh_file.write_text(
        "fvmesh 1\n"
        "cell 0 0.25 0.5 0.5\n"
        "cell 1 0.75 0.501 0.5\n"  # perturbed center breaks orthogonality
        "iedge 0 0 1 1.0 1.0 0.0\n"
        "bedge 0 0 0.5 0.0 -1.0\n"
        "bedge 1 0 0.5 0.0 1.0\n"
        "bedge 2 0 1.0 -1.0 0.0\n"
        "bedge 3 1 0.5 0.0 -1.0\n"
        "bedge 4 1 0.5 0.0 1.0\n"
        "bedge 5 1 1.0 1.0 0.0\n"
    )
    cfg = write(tmp_path, "m.cfg", f"mesh.file = {mesh_file}\ntime.N = 4\ntime.T = 1.0\n")
    assert main(["validate", "--config", cfg]) == 4
    err = capsys.readouterr().err
    assert "edge 0" in err


def test_run_zero_problem_writes_zero_trajectory(tmp_path):
    cfg = write(tmp_path, "zero.cfg",
                "mesh.nx = 3\nmesh.ny = 3\ntime.N = 4\ntime.T = 1.0\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "n,t_n,cell_id,value"
    assert len(rows) == 1 + 5 * 9
    assert all(line.endswith(",0.0") for line in rows[1:])


def test_run_heat_benchmark_decay(tmp_path):
    cfg = write(tmp_path, "heat.cfg", HEAT_CFG)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    final = (out / "norms.csv").read_text().splitlines()[-1].split(",")
    final_l2 = float(final[1])
    exact = 0.5 * math.exp(-2.0 * math.pi**2 * 0.1)
    assert abs(final_l2 - exact) <= 0.05 * exact


def test_run_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, "mc.cfg", MC_CFG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["run", "--config", cfg, "--out", str(out2)]) == 0
    for name in ("trajectory.csv", "norms.csv", "manifest.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_mc_thread_count_invariance(tmp_path):
    cfg = write(tmp_path, "mc.cfg", MC_CFG)
    out1, out2 = tmp_path / "t1", tmp_path / "t4"
    assert main(["mc", "--config", cfg, "--out", str(out1), "--threads", "1"]) == 0
    assert main(["mc", "--config", cfg, "--out", str(out2), "--threads", "4"]) == 0
    assert (out1 / "estimates.csv").read_bytes() == (out2 / "estimates.csv").read_bytes()
    rows = (out1 / "estimates.csv").read_text().splitlines()
    assert rows[0] == "functional,mean,stderr,M,seed,N,h"
    assert len(rows) == 5


def test_mc_unknown_functional_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "mc.cfg", MC_CFG + "mc.functionals = bogus\n")
    assert main(["mc", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_mc_failed_path_aborts_with_exit_3(tmp_path, capsys):
    # A one-iteration fixed-point budget cannot meet the tolerance; the whole
    # estimate aborts rather than dropping the path.
    cfg = write(tmp_path, "mc.cfg", MC_CFG + "solver.max_iters = 1\n")
    assert main(["mc", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "solver failure" in err
    assert "step" in err


def test_converge_heat_mode(tmp_path):
    cfg = write(tmp_path, "h.cfg",
                "mesh.nx = 8\nmesh.ny = 8\ntime.N = 4\ntime.T = 0.1\n"
                "problem.u0 = cospi\nconverge.mode = heat\nconverge.nx0 = 8\n"
                "converge.ny0 = 8\nconverge.levels = 3\nconverge.N0 = 4\n"
                "converge.policy = quadratic\n")
    out = tmp_path / "o"
    assert main(["converge", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "ratetable.csv").read_text().splitlines()
    assert rows[0] == "level,h,N,M,error,stderr,rate"
    assert len(rows) == 4
    rates = [float(r.split(",")[-1]) for r in rows[2:]]
    assert min(rates) >= 1.8


def test_converge_coupled_writes_gaps(tmp_path):
    cfg = write(tmp_path, "c.cfg", MC_CFG.replace("mesh.nx = 1", "mesh.nx = 4")
                .replace("mesh.ny = 1", "mesh.ny = 4")
                .replace("run.M = 256", "run.M = 32")
                + "converge.nx0 = 4\nconverge.ny0 = 4\nconverge.levels = 3\n"
                + "converge.N0 = 8\n")
    out = tmp_path / "o"
    assert main(["converge", "--config", cfg, "--out", str(out)]) == 0
    gaps = (out / "gaps.csv").read_text().splitlines()
    assert gaps[0] == "level,h,N,dt,gap_mean,gap_stderr"
    assert len(gaps) == 4
    manifest = (out / "manifest.txt").read_text()
    assert "converge.gap_exponent" in manifest


def test_mesh_info(tmp_path, capsys):
    cfg = write(tmp_path, "m.cfg", "mesh.nx = 8\nmesh.ny = 8\ntime.N = 4\ntime.T = 1.0\n")
    assert main(["mesh-info", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "cells: 64" in out
    assert "interior edges: 112" in out
    assert "diamond partition total: 1.0" in out


def test_missing_config_file_exit_2(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "m.cfg", "mesh.nx = 2\nmesh.ny = 2\ntime.N = 4\ntime.T = 1.0\n")
    proc = subprocess.run(
        [sys.executable, "-m", "fvsde.cli", "mesh-info", "--config", cfg],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "cells: 4" in proc.stdout
