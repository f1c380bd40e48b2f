import subprocess
import sys

import pytest

from ejecta import problem
from ejecta.cli import main


def run_cli(args, cwd=None):
    r = subprocess.run([sys.executable, "-m", "ejecta.cli", *args],
                       capture_output=True, text=True, cwd=cwd)
    return r


@pytest.fixture()
def exNTse_spec(tmp_path):
    path = tmp_path / "exNTse.toml"
    path.write_text(problem.BUNDLED["exNTse"])
    return path


def test_zeros_reports_both_indices(capsys, exNTse_spec):
    assert main(["zeros", str(exNTse_spec)]) == 0
    out = capsys.readouterr().out
    assert "index = +1" in out and "index = -1" in out
    rows = [line for line in out.splitlines() if line.startswith("p = ")]
    assert len(rows) == 2


def test_zeros_empty_field(capsys, tmp_path):
    path = tmp_path / "nozeros.toml"
    path.write_text("""\
[problem]
dim = 1
period = "2pi"
g = "x^2 + 1"
f = "sin(t)"

[window]
lambda = [-0.1, 0.1]
p = [-1.0, 1.0]
""")
    assert main(["zeros", str(path)]) == 0
    out = capsys.readouterr().out
    assert "none found" in out


def test_malformed_spec_exits_2(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[problem]\ndim = 1\nperiod = ===\n")
    r = run_cli(["zeros", str(path)])
    assert r.returncode == 2
    assert "line" in r.stderr  # position-bearing message


def test_bad_expression_exits_2(tmp_path):
    path = tmp_path / "badexpr.toml"
    path.write_text("""\
[problem]
dim = 1
period = "2pi"
g = "x +"
f = "sin(t)"

[window]
lambda = [-0.1, 0.1]
p = [-1.0, 1.0]
""")
    r = run_cli(["zeros", str(path)])
    assert r.returncode == 2
    assert "position" in r.stderr


def test_missing_file_exits_2(tmp_path):
    r = run_cli(["classify", str(tmp_path / "absent.toml")])
    assert r.returncode == 2


def test_usage_error_exits_2():
    r = run_cli(["frobnicate"])
    assert r.returncode == 2


def test_classify_exsimp(capsys, tmp_path):
    path = tmp_path / "exsimp.toml"
    path.write_text(problem.BUNDLED["exsimp"])
    assert main(["classify", str(path)]) == 0
    out = capsys.readouterr().out
    assert "NonResonant" in out
    assert "-1.5" in out


def test_classify_ex2tang_curvatures(capsys, tmp_path):
    path = tmp_path / "ex2tang.toml"
    path.write_text(problem.BUNDLED["ex2tang"])
    assert main(["classify", str(path)]) == 0
    out = capsys.readouterr().out
    assert "lambda''(p0) = 0," in out
    assert "lambda''(p0) = -4," in out
    assert "lambda''(p0) = 4," in out


def test_classify_ex3d(capsys, tmp_path):
    path = tmp_path / "ex3d.toml"
    path.write_text(problem.BUNDLED["ex3d"])
    assert main(["classify", str(path)]) == 0
    out = capsys.readouterr().out
    assert "Ejecting2D" in out and "witness" in out


def test_multiplicity_values(capsys, tmp_path):
    for pid, n in (("exNTse", 2), ("exsimp", 1)):
        path = tmp_path / f"{pid}.toml"
        path.write_text(problem.BUNDLED[pid])
        assert main(["multiplicity", str(path)]) == 0
        out = capsys.readouterr().out
        assert f"multiplicity lower bound: n = {n}" in out
        assert "assumed without verification" in out


def test_sample_extang_lambda0(tmp_path):
    spec = tmp_path / "extang.toml"
    spec.write_text(problem.BUNDLED["extang"])
    out_csv = tmp_path / "out.csv"
    r = run_cli(["sample", str(spec), "-o", str(out_csv), "--lambda-grid", "3"],
                cwd=tmp_path)
    assert r.returncode == 0
    rows = out_csv.read_text().strip().splitlines()
    assert rows[0] == "lambda,p"
    zero_rows = [x for x in rows[1:] if float(x.split(",")[0]) == 0.0]
    assert len(zero_rows) == 1
    assert abs(float(zero_rows[0].split(",")[1])) < 1e-5
    assert (tmp_path / "out.png").exists()


def test_sample_remnoso_agree_has_no_points_near_zero(tmp_path):
    spec = tmp_path / "ra.toml"
    spec.write_text(problem.BUNDLED["remnoso_agree"])
    out_csv = tmp_path / "ra.csv"
    r = run_cli(["sample", str(spec), "-o", str(out_csv), "--lambda-grid", "11"],
                cwd=tmp_path)
    assert r.returncode == 0
    for row in out_csv.read_text().strip().splitlines()[1:]:
        lam, p = map(float, row.split(","))
        if 0.0 < lam <= 0.05:
            assert abs(p) > 0.2


def test_branch_exsimp_reach(tmp_path):
    spec = tmp_path / "exsimp.toml"
    spec.write_text(problem.BUNDLED["exsimp"])
    out_csv = tmp_path / "branch.csv"
    r = run_cli(["branch", str(spec), "--from", "0", "-o", str(out_csv)],
                cwd=tmp_path)
    assert r.returncode == 0
    rows = out_csv.read_text().strip().splitlines()[1:]
    lams = [float(x.split(",")[0]) for x in rows]
    in_range = [l for l in lams if 0.0 <= l <= 0.3]
    assert len(in_range) >= 100
    assert max(lams) > 0.28


def test_reproduce_unknown_id_lists_known(capsys):
    assert main(["reproduce", "nope"]) == 2
    out = capsys.readouterr().out
    assert "known ids" in out and "exsimp" in out


def test_reproduce_exsimp_report(tmp_path):
    r = run_cli(["reproduce", "exsimp", "-o", str(tmp_path)])
    assert r.returncode == 0
    report = (tmp_path / "exsimp_report.txt").read_text()
    assert "p'(0) = -1.500000 (expected -1.5 ± 1e-6): PASS" in report
    assert (tmp_path / "exsimp_cloud.csv").exists()
    assert (tmp_path / "exsimp_cloud.png").exists()


def test_reproduce_ex3d_report(tmp_path):
    r = run_cli(["reproduce", "ex3d", "-o", str(tmp_path)])
    assert r.returncode == 0
    report = (tmp_path / "ex3d_report.txt").read_text()
    assert "winding_index = 1" in report
    assert "Ejecting2D" in report
    rows = (tmp_path / "ex3d_cloud.csv").read_text().strip().splitlines()
    assert rows[0] == "lambda,x,y"
    assert all(len(row.split(",")) == 3 for row in rows[1:])


def test_command_outputs_are_idempotent(tmp_path):
    spec = tmp_path / "extang.toml"
    spec.write_text(problem.BUNDLED["extang"])
    a = run_cli(["sample", str(spec), "-o", "a.csv", "--lambda-grid", "3"],
                cwd=tmp_path)
    b = run_cli(["sample", str(spec), "-o", "b.csv", "--lambda-grid", "3"],
                cwd=tmp_path)
    assert a.returncode == b.returncode == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_branch_on_planar_problem_exits_2(tmp_path):
    spec = tmp_path / "ex3d.toml"
    spec.write_text(problem.BUNDLED["ex3d"])
    r = run_cli(["branch", str(spec), "--from", "0"], cwd=tmp_path)
    assert r.returncode == 2


def test_branch_from_non_root_exits_1(tmp_path):
    spec = tmp_path / "exsimp.toml"
    spec.write_text(problem.BUNDLED["exsimp"])
    r = run_cli(["branch", str(spec), "--from", "0.7"], cwd=tmp_path)
    assert r.returncode == 1
    assert "starting point" in r.stderr


def test_boundary_zero_degree_exits_1(tmp_path):
    # g(0) = 0 sits on the window boundary; the degree is inadmissible
    path = tmp_path / "bz.toml"
    path.write_text("""\
[problem]
dim = 1
period = "2pi"
g = "x / (1 + x^2)"
f = "1 + cos(x + t)"

[window]
lambda = [-0.3, 0.3]
p = [-2.0, 0.0]
""")
    r = run_cli(["multiplicity", str(path)])
    assert r.returncode == 1
    assert "boundary" in r.stderr.lower() or "vanishes" in r.stderr.lower()


def test_thread_cap_does_not_change_outputs(tmp_path):
    import os

    spec = tmp_path / "exNTse.toml"
    spec.write_text(problem.BUNDLED["exNTse"])
    env1 = {**os.environ, "EJECTA_THREADS": "1"}
    env4 = {**os.environ, "EJECTA_THREADS": "4"}
    subprocess.run([sys.executable, "-m", "ejecta.cli", "sample", str(spec),
                    "-o", "serial.csv", "--lambda-grid", "7"],
                   cwd=tmp_path, env=env1, check=True, capture_output=True)
    subprocess.run([sys.executable, "-m", "ejecta.cli", "sample", str(spec),
                    "-o", "threaded.csv", "--lambda-grid", "7"],
                   cwd=tmp_path, env=env4, check=True, capture_output=True)
    assert (tmp_path / "serial.csv").read_bytes() == \
        (tmp_path / "threaded.csv").read_bytes()
