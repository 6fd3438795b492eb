import io
import os

import numpy as np
import pytest

from heterodg.analysis import read_records
from heterodg.cli import main
from heterodg.config import load_config
from heterodg.harness import banner, run_scenario
from heterodg.model import WaveConditionError
from heterodg.vtk import read_vtk_counts

TINY = """
[experiment]
scenario = convergence
seed = 3
[mesh]
n_elements = 4 9
lloyd_iters = 10
[discretization]
degree = 1
dt = 1e-3
final_time = 2e-3
[model]
manufactured = trigonometric
"""

EQUILIBRIUM = """
[experiment]
scenario = equilibrium-wavefront
[mesh]
shape = disk
disk_radius = 0.08
disk_center = 0.02 0
disk_triangles = 200
n_elements = 20
boundary = N
[discretization]
degree = 1
dt = 0.1
final_time = 0.3
solver = krylov
[model]
d_ext = 1e-6
k0 = {k0}
k1 = 1
k1t = 0.6
k12 = 1
c0 = 0.75
q0 = 0.25*exp(-50*((x-0.02)**2 + y**2))
[checks]
equilibrium_degrees =
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_convergence_run_writes_outputs(tmp_path):
    cfg = load_config(write(tmp_path, "tiny.ini", TINY), overrides={("experiment", "output"): tmp_path / "out"})
    buf = io.StringIO()
    res = run_scenario(cfg, buf)
    out = tmp_path / "out"
    for name in ("config.resolved.ini", "errors.csv", "rates.csv", "checks.txt"):
        assert (out / name).exists()
    recs = read_records(out / "errors.csv")
    assert len(recs) == 4 and {r.field for r in recs} == {"c", "q"}
    assert all(r.energy > 0 for r in recs)
    assert "scenario: convergence" in buf.getvalue()
    assert res.messages and all(m.startswith(("PASS", "FAIL")) for m in res.messages)


def test_same_seed_gives_identical_csv_and_echo_reproduces(tmp_path):
    path = write(tmp_path, "tiny.ini", TINY)
    runs = []
    for d in ("a", "b"):
        cfg = load_config(path, overrides={("experiment", "output"): tmp_path / d})
        run_scenario(cfg, io.StringIO())
        runs.append((tmp_path / d / "errors.csv").read_bytes())
    assert runs[0] == runs[1]
    echo = load_config(tmp_path / "a" / "config.resolved.ini", overrides={("experiment", "output"): tmp_path / "c"})
    run_scenario(echo, io.StringIO())
    assert (tmp_path / "c" / "errors.csv").read_bytes() == runs[0]


def test_banner_reports_condition_and_alpha():
    cfg = load_config(text=EQUILIBRIUM.format(k0=0.75))
    buf = io.StringIO()
    diag = banner(cfg, cfg.params(), buf)
    text = buf.getvalue()
    assert "wave_condition = true" in text and "alpha = 0.15" in text
    assert diag.stable_eq == pytest.approx((0.6, 0.25))


def test_equilibrium_scenario_runs_and_snapshots(tmp_path):
    cfg = load_config(text=EQUILIBRIUM.format(k0=0.75), overrides={("experiment", "output"): tmp_path / "eq",
                                                                   ("experiment", "snapshot_stride"): 1})
    res = run_scenario(cfg, io.StringIO())
    assert res.ok and not res.failed
    snaps = sorted(os.listdir(tmp_path / "eq" / "snapshots"))
    assert len(snaps) == 4
    n, m = read_vtk_counts(tmp_path / "eq" / "snapshots" / snaps[0])
    assert n == 3 * m
    rows = (tmp_path / "eq" / "equilibrium.csv").read_text().splitlines()
    assert rows[0] == "p,t,dist_c,dist_q,min_q" and len(rows) == 5


def test_refuses_front_scenario_without_wave_condition(tmp_path):
    cfg = load_config(text=EQUILIBRIUM.format(k0=0.5), overrides={("experiment", "output"): tmp_path / "x"})
    buf = io.StringIO()
    with pytest.raises(WaveConditionError):
        run_scenario(cfg, buf)
    assert "wave_condition = false" in buf.getvalue()
    path = write(tmp_path, "bad.ini", EQUILIBRIUM.format(k0=0.5))
    assert main(["run", str(path), "--out", str(tmp_path / "y")]) == 2


def test_cli_run_exit_codes(tmp_path, capsys):
    path = write(tmp_path, "tiny.ini", TINY)
    # rates on a 4 -> 9 element pair are far from asymptotic, so checks may fail (1) but never crash (2)
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--seed", "3"]) in (0, 1)
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    bad = write(tmp_path, "bad.ini", "[mesh]\nwhatever = 1\n")
    assert main(["run", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_mesh_commands_and_rates(tmp_path, capsys):
    mfile = tmp_path / "m.txt"
    assert main(["mesh", "gen", str(mfile), "-n", "25", "--seed", "2"]) == 0
    assert main(["mesh", "check", str(mfile)]) == 0
    assert "25 elements" in capsys.readouterr().out
    disk = tmp_path / "disk.txt"
    assert main(["mesh", "gen", str(disk), "--disk", "-n", "300", "--radius", "0.5"]) == 0
    agg = tmp_path / "agg.txt"
    assert main(["mesh", "agglomerate", str(disk), str(agg), "--target", "30"]) == 0
    assert main(["mesh", "check", str(agg)]) == 0
    run = write(tmp_path, "tiny.ini", TINY)
    main(["run", str(run), "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["rates", str(tmp_path / "r" / "errors.csv")]) == 0
    out = capsys.readouterr().out
    assert "energy" in out and "convergence" in out


def test_loaded_mesh_config(tmp_path):
    mfile = tmp_path / "m.txt"
    main(["mesh", "gen", str(mfile), "-n", "9", "--boundary", "D"])
    text = TINY.replace("n_elements = 4 9", f"source = load\npath = {mfile.name}\nn_elements = 9")
    cfg = load_config(write(tmp_path, "load.ini", text), overrides={("experiment", "output"): tmp_path / "l"})
    res = run_scenario(cfg, io.StringIO())
    recs = read_records(tmp_path / "l" / "errors.csv")
    assert {r.n_el for r in recs} == {9} and not res.failed


def test_solver_failure_leaves_partial_outputs(tmp_path, monkeypatch):
    from heterodg import timestep

    real = timestep.Stepper.solve

    def flaky(self, K, rhs, x0=None):
        if self.n > 4 * 3:  # first mesh (4 elements) runs, second one fails
            raise timestep.SolverError("forced", 1e20)
        return real(self, K, rhs, x0)
    monkeypatch.setattr(timestep.Stepper, "solve", flaky)
    cfg = load_config(text=TINY, overrides={("experiment", "output"): tmp_path / "f"})
    buf = io.StringIO()
    res = run_scenario(cfg, buf)
    assert res.failed and not res.ok
    assert "FAIL solver: forced (condition estimate 1.000e+20)" in buf.getvalue()
    recs = read_records(tmp_path / "f" / "errors.csv")
    assert {r.n_el for r in recs} == {4}
    assert "FAIL solver" in (tmp_path / "f" / "checks.txt").read_text()
