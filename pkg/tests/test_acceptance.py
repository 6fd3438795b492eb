"""Acceptance criteria 1-8, one verdict line each in the terminal summary.

Criteria 1-5 run the shipped configs end to end and take a while; select
them with ``-m slow`` or skip them with ``-m "not slow"``.
"""
import io
from pathlib import Path

import numpy as np
import pytest

from conftest import VERDICTS
from heterodg.analysis import fit_rates
from heterodg.config import load_config
from heterodg.dgspace import DgSpace
from heterodg.experiments import initial_state
from heterodg.forms import (assemble_mass, assemble_nonlinear_reaction, assemble_reaction, assemble_stiffness,
                            build_system, compute_penalty)
from heterodg.harness import run_scenario
from heterodg.mesh import DIRICHLET, NEUMANN, PolyMesh
from heterodg.meshgen import generate_voronoi_mesh, structured_quad_mesh, structured_triangle_mesh
from heterodg.model import DiffusionSpec, HeterodimerParams, diagnostics, equilibria, fk_alpha, min_wave_speed
from heterodg.timestep import EXTRAPOLATED, Stepper, ThetaScheme, solve_transient

from oracles import dense_system, scalar_theta_ode

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def verdict(n, ok, detail):
    VERDICTS[n] = (bool(ok), detail)
    assert ok, detail


def run_config(name, tmp_path):
    cfg = load_config(CONFIGS / f"{name}.ini", overrides={("experiment", "output"): tmp_path / name})
    buf = io.StringIO()
    res = run_scenario(cfg, buf)
    return res, buf.getvalue()


def const(v):
    return lambda x, t=0.0: np.full(np.shape(x)[:-1], float(v))


@pytest.mark.slow
def test_criterion_1_spatial_rates(tmp_path):
    # the band is checked on c; q slopes are only reported
    res, _ = run_config("convergence", tmp_path)
    bad, worst = [], {"c": 0.0, "q": 0.0}
    for p in (1, 2, 3, 4):
        for fld in ("c", "q"):
            recs = sorted((r for r in res.records if r.p == p and r.field == fld), key=lambda r: -r.h)
            for norm, target in (("energy", p), ("l2", p + 1)):
                s = fit_rates([r.h for r in recs], [getattr(r, norm) for r in recs]).least_squares
                worst[fld] = max(worst[fld], abs(s - target))
                if fld == "c" and abs(s - target) > 0.3:
                    bad.append(f"p={p} {norm} {s:.2f}")
    verdict(1, not bad and not res.failed,
            f"c h-slopes p=1..4, energy and L2, worst deviation {worst['c']:.3f} (limit 0.3); "
            f"q worst deviation {worst['q']:.3f}" + (f"; off: {', '.join(bad)}" if bad else ""))


@pytest.mark.slow
def test_criterion_2_temporal_rates(tmp_path):
    res, _ = run_config("timestep_convergence", tmp_path)
    slopes = {}
    for name in ("BE", "CN"):
        recs = sorted((r for r in res.records if r.test == f"timestep-{name}" and r.field == "c"), key=lambda r: -r.dt)
        slopes[name] = fit_rates([r.dt for r in recs], [r.energy for r in recs]).least_squares
    cn01 = next(r.energy for r in res.records if r.test == "timestep-CN" and r.field == "c" and abs(r.dt - 0.1) < 1e-12)
    ok = abs(slopes["BE"] - 1) <= 0.1 and abs(slopes["CN"] - 2) <= 0.1 and 7.08e-4 / 3 <= cn01 <= 3 * 7.08e-4
    verdict(2, ok and not res.failed,
            f"BE slope {slopes['BE']:.3f} (1 +- 0.1), CN slope {slopes['CN']:.3f} (2 +- 0.1), "
            f"CN error at dt=0.1 {cn01:.3e} (7.08e-4 within 3x)")


@pytest.mark.slow
def test_criterion_3_exponential_in_p(tmp_path):
    res, _ = run_config("p_convergence", tmp_path)
    recs = sorted((r for r in res.records if r.field == "c"), key=lambda r: r.p)
    p = np.array([r.p for r in recs])
    e = np.array([r.energy for r in recs])
    tail = p >= 2
    slope = np.polyfit(p[tail], np.log(e[tail]), 1)[0]
    decreasing = bool(np.all(np.diff(e[tail]) < 0))
    verdict(3, decreasing and slope <= -1 and not res.failed,
            f"c energy error p=1..8 {e[0]:.2e} .. {e[-1]:.2e}, strictly decreasing for p >= 2: {decreasing}, "
            f"ln-error slope {slope:.2f} per unit p (<= -1)")


@pytest.mark.slow
def test_criterion_4_travelling_wave(tmp_path):
    res, _ = run_config("travelling_wave", tmp_path)
    checks = [m for m in res.messages if m.startswith(("PASS", "FAIL"))]
    failed = [m[5:] for m in checks if m.startswith("FAIL")]
    speed = [m for m in checks if "front speed" in m]
    dof = [m for m in checks if "equal-DOF" in m]
    verdict(4, checks and speed and dof and not failed and not res.failed,
            f"{len(checks) - len(failed)}/{len(checks)} checks pass; {speed[-1][5:] if speed else 'no speed fit'}; "
            f"{dof[0][5:] if dof else 'no equal-DOF pair'}" + (f"; failing: {'; '.join(failed)}" if failed else ""))


@pytest.mark.slow
def test_criterion_5_equilibrium_attraction(tmp_path):
    res, log = run_config("equilibrium_wavefront", tmp_path)
    final = [m for m in res.messages if m.startswith(("PASS p=3", "FAIL p=3"))]
    ok = (final and final[0].startswith("PASS") and "wave_condition = true" in log
          and "alpha = 0.15" in log and not res.failed)
    verdict(5, ok, (final[0][5:] if final else "no p=3 result") + "; banner: "
            + next((ln for ln in log.splitlines() if "wave_condition" in ln), "missing"))


def _oracle_meshes():
    square = PolyMesh(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]), [np.array([0, 1, 2, 3])],
                      default_tag=DIRICHLET)
    yield "single square", square
    yield "two triangles", structured_triangle_mesh(1, 1, boundary_tag=NEUMANN)
    yield "2x2 quads", structured_quad_mesh(2, 2, boundary_tag=DIRICHLET)
    for n, seed in ((3, 4), (4, 2)):
        m = generate_voronoi_mesh(n_elements=n, seed=seed, lloyd_iters=10)
        yield f"{n} Voronoi cells, mixed D/N", m.with_boundary_tags(
            lambda mid, nrm: DIRICHLET if mid[0] < 1e-12 else NEUMANN)


def test_criterion_6_oracle_equivalence():
    Dm = np.array([[1.3, 0.4], [0.4, 0.7]])
    D = lambda x, t=0.0: np.broadcast_to(Dm, np.shape(x)[:-1] + (2, 2)).copy()
    k1, k12, k1t = 0.8, 1.5, 0.6
    rng = np.random.default_rng(0)
    worst, cases = 0.0, 0
    for _, mesh in _oracle_meshes():
        for p in (0, 1, 2):
            V = DgSpace(mesh, p)
            phi = rng.normal(size=V.n_dofs)
            ref = dense_system(V, Dm, const(k1), const(k12), phi, 10.0, const(k1t))
            got = (assemble_mass(V), assemble_stiffness(V, D, compute_penalty(V, D, k1, k1t, k12, 10.0)),
                   assemble_reaction(V, k1), assemble_nonlinear_reaction(V, k12, phi))
            for G, R in zip(got, ref):
                worst = max(worst, np.abs(G.toarray() - R).max() / np.abs(R).max())
            cases += 1
    verdict(6, worst <= 1e-11, f"M, A, R_L, R_N on {cases} mesh/degree cases (<= 4 elements, p <= 2), "
            f"worst relative max-norm difference {worst:.1e} (limit 1e-11)")


def test_criterion_7_invariants():
    out = {}
    D = lambda x, t=0.0: np.broadcast_to(np.array([[1.3, 0.4], [0.4, 0.7]]), np.shape(x)[:-1] + (2, 2)).copy()
    V = DgSpace(generate_voronoi_mesh(n_elements=12, seed=3, lloyd_iters=20), 2)
    A = assemble_stiffness(V, D, compute_penalty(V, D, 1.0, 1.0, 1.0, 10.0)).toarray()
    out["A symmetry"] = np.abs(A - A.T).max() / np.abs(A).max() <= 1e-12
    out["A PSD"] = np.linalg.eigvalsh(A).min() >= -1e-10 * np.linalg.norm(A, 2)
    one = V.l2_project(const(1.0))
    out["constants in Neumann kernel"] = np.abs(A @ one).max() <= 1e-10 * np.linalg.norm(A, 2)

    S = build_system(V, HeterodimerParams(DiffusionSpec(0.5), k1=0.0, k1t=0.0, k12=0.0))
    bump = lambda x, t=0.0: np.exp(-20 * ((x[..., 0] - 0.3) ** 2 + (x[..., 1] - 0.6) ** 2))
    s0 = initial_state(V, bump, const(0.5))
    m0 = one @ s0.C
    drift = []
    solve_transient(S, ThetaScheme.crank_nicolson(0.01), s0, 1.0, [lambda s: drift.append(abs(one @ s.C - m0) / m0)])
    out["mass conservation over 100 steps"] = len(drift) == 101 and max(drift) <= 1e-10

    S = build_system(V, HeterodimerParams(DiffusionSpec(1e-2), k1=1.0, k1t=0.6, k12=1.0, k0=0.75))
    fixed = True
    for scheme in (ThetaScheme.backward_euler(0.1), ThetaScheme.crank_nicolson(0.1)):
        states = []
        solve_transient(S, scheme, initial_state(V, const(0.6), const(0.25)), 1.0, [states.append])
        fixed &= all(max(np.abs(b.C - a.C).max(), np.abs(b.Q - a.Q).max()) <= 1e-10 for a, b in zip(states, states[1:]))
    out["stable equilibrium fixed point"] = fixed

    a, b = np.random.default_rng(5).normal(size=(2, V.n_dofs))
    RN = lambda u: assemble_nonlinear_reaction(V, 1.7, u).toarray()
    lin = RN(2 * a - 3 * b) - (2 * RN(a) - 3 * RN(b))
    out["R_N linear in its argument"] = np.abs(lin).max() <= 1e-12 * np.abs(RN(2 * a - 3 * b)).max()

    S = build_system(V, HeterodimerParams(DiffusionSpec(0.3), k1=1.0, k1t=0.6, k12=1.0, k0=0.75))
    ode_ok = True
    for scheme in (ThetaScheme.backward_euler(0.05), ThetaScheme.crank_nicolson(0.05)):
        ref = scalar_theta_ode(0.7, 0.05, 0.75, 1.0, 0.6, 1.0, scheme.dt, 20, scheme.theta,
                               scheme.linearization == EXTRAPOLATED)
        got = []
        solve_transient(S, scheme, initial_state(V, const(0.7), const(0.05)), 1.0, [got.append])
        ode_ok &= all(max(np.abs(s.C - c * one).max(), np.abs(s.Q - q * one).max()) <= 1e-10
                      for s, (c, q) in zip(got, ref))
    out["scalar ODE oracle for constant data"] = ode_ok

    st = Stepper(S, ThetaScheme.crank_nicolson(0.05))
    s1 = st.step(initial_state(V, const(0.75), bump))
    out["block residual certificate"] = st.last_residual <= 1e-10

    failed = [k for k, v in out.items() if not v]
    verdict(7, not failed, f"{len(out) - len(failed)}/{len(out)} invariants hold"
            + (f"; failing: {', '.join(failed)}" if failed else ""))


def test_criterion_8_analytic_diagnostics():
    def params(d_ext, k0, k1, k1t, k12):
        return HeterodimerParams(DiffusionSpec(d_ext), k1=k1, k1t=k1t, k12=k12, k0=k0)
    t3 = params(1e-6, 0.75, 1.0, 0.6, 1.0)
    t4 = params(8.0, 0.6, 0.5, 0.3, 1.0)
    d3 = diagnostics(t3)
    got = {
        "Table-3 equilibria": equilibria(t3) == ((0.75, 0.0), pytest.approx((0.6, 0.25), abs=1e-15)),
        "Table-3 alpha 0.15": fk_alpha(t3) == pytest.approx(0.15, abs=1e-15) and d3.wave_condition,
        "Table-3 speed^2 = 4 d alpha": min_wave_speed(t3) ** 2 == pytest.approx(4e-6 * 0.15, rel=1e-14),
        "Table-4 alpha 0.9": fk_alpha(t4) == pytest.approx(0.9, abs=1e-15),
        "Table-4 stable point (0.3, 1.5)": equilibria(t4)[1] == pytest.approx((0.3, 1.5), abs=1e-15),
        "Table-4 speed^2 = 4 d alpha": min_wave_speed(t4) ** 2 == pytest.approx(4 * 8.0 * 0.9, rel=1e-14),
    }
    failed = [k for k, v in got.items() if not v]
    verdict(8, not failed, f"{len(got) - len(failed)}/{len(got)} diagnostic values match; "
            f"alpha = {fk_alpha(t3):g} and {fk_alpha(t4):g}, speed = {min_wave_speed(t3):.6g}"
            + (f"; failing: {', '.join(failed)}" if failed else ""))
