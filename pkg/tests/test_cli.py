"""Command-line driver: run directories, artifacts, exit codes, echo formats."""

import json
import re

import numpy as np
import pytest

from fracl2.cli import main
from oracles import agrees_3sig

RUN_DIR_RE = re.compile(r"^(mesh|certify|solve|table)-[0-9a-f]{12}$")


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path), *argv])


def only_run_dir(tmp_path, command):
    dirs = [d for d in tmp_path.iterdir() if d.is_dir() and d.name.startswith(command)]
    assert len(dirs) == 1 and RUN_DIR_RE.match(dirs[0].name)
    return dirs[0]


def test_mesh_command(tmp_path, capsys):
    assert run(tmp_path, "mesh", "--M", "64", "--r", "2") == 0
    out = capsys.readouterr().out
    assert "mesh: M=64 T=1.0" in out
    assert "regularity: ok=True" in out
    rdir = only_run_dir(tmp_path, "mesh")
    assert (rdir / "mesh.txt").exists()
    rep = json.loads((rdir / "regularity.json").read_text())
    assert rep["ok"] is True and rep["first_sigma_violation"] is None


def test_mesh_rejects_bad_file(tmp_path, capsys):
    bad = tmp_path / "nodes.txt"
    bad.write_text("0.0\n0.5\n0.3\n1.0\n")
    assert run(tmp_path, "mesh", "--file", str(bad)) == 2
    assert "error:" in capsys.readouterr().err


def test_mesh_modified_auto_offset(tmp_path, capsys):
    assert run(tmp_path, "mesh", "--M", "32", "--r", "5", "--modified",
               "--alpha", "0.5") == 0
    out = capsys.readouterr().out
    assert "K auto-computed: 13" in out


def test_certify_uniform(tmp_path, capsys):
    assert run(tmp_path, "certify", "--uniform", "--M", "16", "--alpha", "0.5") == 0
    out = capsys.readouterr().out
    assert "certificate: PASS (sigma_bar=0.156142, K=1, M=16)" in out
    cert = json.loads((only_run_dir(tmp_path, "certify") / "certificate.json").read_text())
    assert cert["passed"] is True
    for key in ("alpha", "K", "M", "betas_in_unit", "conditions",
                "inverse_checked", "sigma_admissible"):
        assert key in cert
    assert {c["name"] for c in cert["conditions"]} == {"subdiagonal",
                                                       "second_subdiagonal"}


def test_certify_adversarial_reports_failure(tmp_path, capsys):
    nodes = tmp_path / "nodes.txt"
    nodes.write_text("0.0\n0.1\n0.15\n0.4\n1.0\n")
    assert run(tmp_path, "certify", "--file", str(nodes), "--alpha", "0.5") == 0
    out = capsys.readouterr().out
    assert "certificate: FAIL" in out
    assert "sigma sequence not monotone" in out
    cert = json.loads((only_run_dir(tmp_path, "certify") / "certificate.json").read_text())
    assert cert["passed"] is False


def test_certify_with_inverse_check(tmp_path, capsys):
    assert run(tmp_path, "certify", "--uniform", "--M", "12", "--alpha", "0.3",
               "--verify-inverse") == 0
    out = capsys.readouterr().out
    assert "brute-force inverse min entry:" in out


def test_solve_reference_problem(tmp_path, capsys):
    assert run(tmp_path, "solve", "--preset", "talpha", "--uniform",
               "--M", "32", "--alpha", "0.5") == 0
    out = capsys.readouterr().out
    m = re.search(r"error at T: ([0-9.e+-]+) +max: ([0-9.e+-]+)", out)
    assert m and agrees_3sig(float(m.group(1)), 4.557e-3)
    assert agrees_3sig(float(m.group(2)), 3.794e-2)
    assert "solve: preset=talpha alpha=0.5 r=1 M=32" in out
    rdir = only_run_dir(tmp_path, "solve")
    lines = (rdir / "solution.csv").read_text().splitlines()
    assert re.match(r"^# fracl2 [0-9.]+ solve config=[0-9a-f]{12}$", lines[0])
    assert lines[1] == "m,t,U"
    assert len(lines) == 2 + 33


def test_solve_zero_and_smooth(tmp_path, capsys):
    assert run(tmp_path, "solve", "--preset", "zero", "--uniform", "--M", "8") == 0
    rdir = only_run_dir(tmp_path, "solve")
    rows = (rdir / "solution.csv").read_text().splitlines()[2:]
    assert all(float(row.split(",")[2]) == 0.0 for row in rows)
    capsys.readouterr()
    # default grading is (3-alpha)/alpha, steep enough for full accuracy
    assert run(tmp_path, "solve", "--preset", "quad", "--M", "16",
               "--alpha", "0.5") == 0
    out = capsys.readouterr().out
    m = re.search(r"error at T: ([0-9.e+-]+) +max: ([0-9.e+-]+)", out)
    assert float(m.group(2)) <= 1e-9
    assert "r=5" in out


def test_solve_parabolic_snapshots(tmp_path, capsys):
    assert run(tmp_path, "solve", "--preset", "sinx", "--uniform", "--M", "4",
               "--N", "8", "--snapshots", "0.5,1.0") == 0
    out = capsys.readouterr().out
    assert "error at T:" in out
    rdir = only_run_dir(tmp_path, "solve")
    lines = (rdir / "solution.csv").read_text().splitlines()
    assert lines[1] == "t,x,U"
    assert len(lines) == 2 + 2 * 10  # two snapshots on N + 2 = 10 nodes


def test_table_direct_flags_deterministic(tmp_path, capsys):
    argv = ("table", "--alphas", "0.5", "--rules", "1", "--Ms", "32,64",
            "--metric", "at-final-time")
    assert run(tmp_path, *argv) == 0
    rdir = only_run_dir(tmp_path, "table")
    first = (rdir / "table.csv").read_bytes()
    out1 = capsys.readouterr().out
    assert "alpha=0.5" in out1 and "M=64" in out1
    assert run(tmp_path, *argv) == 0
    assert (rdir / "table.csv").read_bytes() == first
    # thread count changes neither the run directory nor a byte of output
    assert run(tmp_path, *argv, "--threads", "2") == 0
    assert (rdir / "table.csv").read_bytes() == first
    assert (rdir / "table.json").exists() and (rdir / "table.txt").exists()


def test_table_requires_campaign(tmp_path, capsys):
    assert run(tmp_path, "table") == 2
    assert "need --benchmark" in capsys.readouterr().err
    assert run(tmp_path, "table", "--alphas", "0.5", "--rules", "alpha-1",
               "--Ms", "16") == 2


def test_table_benchmark_reference_column(tmp_path, capsys):
    assert run(tmp_path, "table", "--benchmark", "errors-at-1", "--Ms", "32") == 0
    rdir = only_run_dir(tmp_path, "table")
    refs = {
        ("0.3", "1"): 3.324e-3, ("0.5", "1"): 4.557e-3, ("0.7", "1"): 4.501e-3,
        ("0.3", "(3-alpha)/0.95"): 1.570e-4, ("0.5", "(3-alpha)/0.95"): 5.440e-4,
        ("0.7", "(3-alpha)/0.95"): 9.278e-4,
        ("0.3", "(3-alpha)/alpha"): 8.360e-4, ("0.5", "(3-alpha)/alpha"): 7.448e-4,
        ("0.7", "(3-alpha)/alpha"): 9.391e-4,
    }
    lines = (rdir / "table.csv").read_text().splitlines()
    assert lines[0].startswith("# fracl2") and lines[1].startswith("alpha,")
    seen = 0
    for line in lines[2:]:
        if not line:
            continue
        alpha, rule, _, M, err, _, status = line.split(",")
        assert status == "ok"
        assert agrees_3sig(float(err), refs[(alpha, rule)]), (alpha, rule)
        seen += 1
    assert seen == 9


def test_unknown_subcommand_exits(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "frobnicate")
    assert exc.value.code == 2


def test_out_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACL2_OUT", str(tmp_path / "envout"))
    assert main(["mesh", "--M", "8"]) == 0
    assert (tmp_path / "envout").is_dir()
    assert any(d.name.startswith("mesh-") for d in (tmp_path / "envout").iterdir())
