"""Named experiment scenarios driven by an :class:`ExperimentConfig`."""
from __future__ import annotations

import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import model
from .analysis import (EnergyAccumulator, ErrorRecord, WaveTrace, estimate_wave_speed, fit_rates,
                       format_records)
from .config import ExperimentConfig, dump_config
from .dgspace import DgSpace, contract
from .experiments import initial_state, voronoi_mesh
from .forms import build_system
from .manufactured import arctan_front, trigonometric_pair
from .mesh import DIRICHLET, NEUMANN, load_mesh
from .meshgen import agglomerate, disk_triangle_mesh
from .timestep import DivergenceError, SolverError, ThetaScheme, n_steps_for, solve_transient
from .vtk import emit_vtk

log = logging.getLogger(__name__)


@dataclass
class ScenarioResult:
    ok: bool
    records: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    wave: WaveTrace | None = None
    failed: bool = False

    def check(self, cond, msg):
        self.messages.append(("PASS " if cond else "FAIL ") + msg)
        self.ok = self.ok and bool(cond)
        return cond


# ---------------------------------------------------------------- shared pieces

def build_mesh(cfg: ExperimentConfig, n_elements):
    src = cfg.get("mesh", "source")
    tag = cfg.get("mesh", "boundary").strip()
    if tag and tag not in (DIRICHLET, NEUMANN):
        raise ValueError(f"boundary tag must be D or N, got {tag!r}")
    if src == "generate" and cfg.get("mesh", "shape") == "rectangle":
        return voronoi_mesh(cfg.domain, n_elements, cfg.seed, tag or DIRICHLET, cfg.int("mesh", "lloyd_iters"))
    if src == "generate":
        tri = disk_triangle_mesh(cfg.int("mesh", "disk_triangles"), cfg.float("mesh", "disk_radius"),
                                 tuple(cfg.floats("mesh", "disk_center")), cfg.seed, tag or NEUMANN)
        return agglomerate(tri, n_elements, cfg.seed) if n_elements < tri.n_elements else tri
    mesh = load_mesh(cfg.resolve_path(cfg.get("mesh", "path")))
    if tag:
        mesh = mesh.with_boundary_tags(tag)
    if src == "agglomerate":
        mesh = agglomerate(mesh, n_elements, cfg.seed)
    return mesh


def scheme_from(cfg, dt, name=None):
    if name == "BE":
        return ThetaScheme.backward_euler(dt)
    if name == "CN":
        return ThetaScheme.crank_nicolson(dt)
    return ThetaScheme(cfg.float("discretization", "theta"), dt, cfg.get("discretization", "linearization"))


def expected_order(scheme: ThetaScheme):
    return 2 if scheme.theta == 0.5 and scheme.linearization == "extrapolated" else 1


def manufactured_solution(cfg):
    name = cfg.get("model", "manufactured")
    if name == "trigonometric":
        return trigonometric_pair()
    if name == "arctan-front":
        x0, x1, _, _ = cfg.domain
        return arctan_front(cfg.float("model", "wave_speed"), x1 - x0)
    return None


def manufactured_coefficients(cfg):
    m = cfg.sections["model"]
    if float(m["d_axn"]) != 0:
        raise ValueError("manufactured solutions assume isotropic diffusion")
    out = {}
    for k in ("k1", "k1t", "k12", "k0"):
        out[k] = float(m[k])
    out["d_ext"] = float(m["d_ext"])
    return out


def banner(cfg: ExperimentConfig, params, out=sys.stdout):
    """Print the run header and return the diagnostics (None when unavailable)."""
    print(f"scenario: {cfg.scenario}   seed: {cfg.seed}", file=out)
    try:
        diag = model.diagnostics(params)
    except model.UnsupportedDiagnosticError as exc:
        print(f"diagnostics: unavailable ({exc})", file=out)
        return None
    print(f"wave_condition = {str(diag.wave_condition).lower()}   alpha = {diag.fk_alpha:.6g}", file=out)
    print(f"equilibria: unstable = ({diag.unstable_eq[0]:.6g}, {diag.unstable_eq[1]:.6g})  "
          f"stable = ({diag.stable_eq[0]:.6g}, {diag.stable_eq[1]:.6g})", file=out)
    if diag.min_wave_speed is not None:
        print(f"minimum wave speed = {diag.min_wave_speed:.6g}", file=out)
    return diag


def write_outputs(cfg: ExperimentConfig, result: ScenarioResult):
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.resolved.ini"), "w") as fh:
        fh.write(dump_config(cfg))
    if result.records:
        with open(os.path.join(out, "errors.csv"), "w", newline="") as fh:
            fh.write(format_records(result.records))
    for name, (header, rows) in result.tables.items():
        with open(os.path.join(out, name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    with open(os.path.join(out, "checks.txt"), "w") as fh:
        fh.write("\n".join(result.messages) + "\n")


class SnapshotWriter:
    """Callback writing a VTK file every ``stride`` steps."""

    def __init__(self, space, directory, prefix, stride):
        self.space, self.dir, self.prefix, self.stride = space, directory, prefix, stride
        if stride > 0:
            os.makedirs(directory, exist_ok=True)

    def __call__(self, state):
        if self.stride > 0 and state.step % self.stride == 0:
            emit_vtk(self.space, state, os.path.join(self.dir, f"{self.prefix}_{state.step:07d}.vtk"))


def manufactured_run(cfg, mesh, p, scheme, T_list, test, snapshots_prefix=None, extra=()):
    """Run a manufactured problem once up to max(T_list); error records at every T in the list."""
    sol = manufactured_solution(cfg)
    params = sol.params(**manufactured_coefficients(cfg))
    space = DgSpace(mesh, p)
    system = build_system(space, params, cfg.float("discretization", "gamma0"))
    acc = {"c": EnergyAccumulator(space, system.D, system.penalty, sol.c, sol.grad_c, lambda s: s.C),
           "q": EnergyAccumulator(space, system.D, system.penalty, sol.q, sol.grad_q, lambda s: s.Q)}
    targets = {n_steps_for(T, scheme.dt): T for T in T_list}
    records = []

    def record(state):
        if state.step in targets:
            for name, a in acc.items():
                records.append(ErrorRecord(test, p, mesh.n_elements, mesh.h, scheme.dt, targets[state.step], name,
                                           a.last.l2, a.last.dg, a.value, space.n_dofs))

    cbs = [acc["c"], acc["q"], record, *extra]
    if snapshots_prefix and cfg.snapshot_stride > 0:
        cbs.append(SnapshotWriter(space, os.path.join(cfg.output, "snapshots"), snapshots_prefix, cfg.snapshot_stride))
    solve_transient(system, scheme, initial_state(space, params.c_0, params.q_0), max(T_list), cbs,
                    solver=cfg.get("discretization", "solver"))
    return space, records


def _pick(records, **kw):
    return [r for r in records if all(getattr(r, k) == v for k, v in kw.items())]


# ---------------------------------------------------------------- scenarios

def run_convergence(cfg: ExperimentConfig, res: ScenarioResult | None = None) -> ScenarioResult:
    """Errors over a sweep of meshes and degrees, with h-rates per degree."""
    res = res if res is not None else ScenarioResult(True)
    dt = cfg.floats("discretization", "dt")[0]
    T = cfg.floats("discretization", "final_time")[0]
    scheme = scheme_from(cfg, dt)
    tol = cfg.float("checks", "rate_tolerance")
    for n in cfg.n_elements:
        mesh = build_mesh(cfg, n)
        for p in cfg.degrees:
            _, recs = manufactured_run(cfg, mesh, p, scheme, [T], "convergence", f"p{p}_n{n}")
            res.records += recs
    rows = []
    for p in cfg.degrees:
        for fld in ("c", "q"):
            recs = sorted(_pick(res.records, p=p, field=fld), key=lambda r: -r.h)
            if len(recs) < 2:
                continue
            h = [r.h for r in recs]
            for norm, target in (("energy", p), ("l2", p + 1)):
                fit = fit_rates(h, [getattr(r, norm) for r in recs])
                rows.append((p, fld, norm, fit.least_squares, " ".join(f"{s:.3f}" for s in fit.pairwise)))
                if fld in cfg.get("checks", "check_fields").split():
                    res.check(abs(fit.least_squares - target) <= tol,
                              f"p={p} {fld} {norm} slope {fit.least_squares:.3f} vs {target} +- {tol}")
    res.tables["rates.csv"] = (("p", "field", "norm", "least_squares", "pairwise"), rows)
    return res


def run_p_convergence(cfg: ExperimentConfig, res: ScenarioResult | None = None) -> ScenarioResult:
    """Errors on one mesh for increasing degree."""
    res = res if res is not None else ScenarioResult(True)
    dt = cfg.floats("discretization", "dt")[0]
    T = cfg.floats("discretization", "final_time")[0]
    scheme = scheme_from(cfg, dt)
    mesh = build_mesh(cfg, cfg.n_elements[0])
    for p in sorted(cfg.degrees):
        _, recs = manufactured_run(cfg, mesh, p, scheme, [T], "p-convergence", f"p{p}")
        res.records += recs
    rows = []
    for fld in ("c", "q"):
        recs = sorted(_pick(res.records, field=fld), key=lambda r: r.p)
        ps = np.array([r.p for r in recs])
        e = np.array([r.energy for r in recs])
        tail = ps >= 2
        slope = float(np.polyfit(ps[tail], np.log(e[tail]), 1)[0]) if tail.sum() >= 2 else float("nan")
        rows.append((fld, slope))
        if fld in cfg.get("checks", "check_fields").split():
            res.check(bool(np.all(np.diff(e[tail]) < 0)), f"{fld} energy error strictly decreasing for p >= 2")
            res.check(slope <= -1.0, f"{fld} mean slope of ln(error) per unit p = {slope:.3f} <= -1")
    res.tables["p_rates.csv"] = (("field", "ln_error_slope_per_p"), rows)
    return res


def run_timestep_convergence(cfg: ExperimentConfig, res: ScenarioResult | None = None) -> ScenarioResult:
    """Errors for a sequence of time steps and each requested scheme."""
    res = res if res is not None else ScenarioResult(True)
    T = cfg.floats("discretization", "final_time")[0]
    mesh = build_mesh(cfg, cfg.n_elements[0])
    p = cfg.degrees[0]
    tol = cfg.float("checks", "time_rate_tolerance")
    names = cfg.get("discretization", "schemes").split() or [None]
    rows = []
    for name in names:
        recs_s = []
        for dt in sorted(cfg.floats("discretization", "dt"), reverse=True):
            scheme = scheme_from(cfg, dt, name)
            _, recs = manufactured_run(cfg, mesh, p, scheme, [T], f"timestep-{scheme.name}", f"{scheme.name}_dt{dt:g}")
            recs_s += recs
        res.records += recs_s
        order = expected_order(scheme)
        for fld in ("c", "q"):
            recs = sorted(_pick(recs_s, field=fld), key=lambda r: -r.dt)
            fit = fit_rates([r.dt for r in recs], [r.energy for r in recs])
            rows.append((scheme.name, fld, fit.least_squares, " ".join(f"{s:.3f}" for s in fit.pairwise)))
            if fld in cfg.get("checks", "check_fields").split():
                res.check(abs(fit.least_squares - order) <= tol,
                          f"{scheme.name} {fld} time slope {fit.least_squares:.3f} vs {order} +- {tol}")
    res.tables["time_rates.csv"] = (("scheme", "field", "least_squares", "pairwise"), rows)
    return res


def run_travelling_wave(cfg: ExperimentConfig, res: ScenarioResult | None = None) -> ScenarioResult:
    """Moving-front problem: errors at several final times and the fitted front speed."""
    res = res if res is not None else ScenarioResult(True)
    dt = cfg.floats("discretization", "dt")[0]
    T_list = sorted(cfg.floats("discretization", "final_time"))
    scheme = scheme_from(cfg, dt)
    finest = max(cfg.n_elements)
    probe_every = max(1, int(round(1.0 / dt)))  # front positions at unit time intervals
    for n in sorted(cfg.n_elements):
        mesh = build_mesh(cfg, n)
        for p in cfg.degrees:
            snaps = []

            def keep(state, snaps=snaps):
                if state.step % probe_every == 0:
                    snaps.append((state.t, state.Q.copy()))
            track = n == finest and p >= 2
            space, recs = manufactured_run(cfg, mesh, p, scheme, T_list, "travelling-wave", f"p{p}_n{n}",
                                           extra=(keep,) if track else ())
            res.records += recs
            if track:
                trace = estimate_wave_speed(space, snaps)
                v = cfg.float("model", "wave_speed")
                tol = cfg.float("checks", "speed_tolerance")
                res.tables[f"front_p{p}_n{n}.csv"] = (("t", "x_front"), list(zip(map(float, trace.times),
                                                                                   map(float, trace.positions))))
                res.check(abs(trace.speed - v) <= tol * v,
                          f"front speed p={p} n_el={n}: {trace.speed:.5f} (95% band {trace.band[0]:.5f}"
                          f"..{trace.band[1]:.5f}) vs {v} +- {100 * tol:g}%")
                res.wave = trace
    ratio = cfg.float("checks", "time_ratio")
    groups = {}
    for r in res.records:
        if r.field == "q":
            groups.setdefault((r.n_el, r.p), []).append(r)
    if len(T_list) >= 2:
        for (n, p), recs in sorted(groups.items()):
            e = [r.l2 for r in sorted(recs, key=lambda r: r.T)]
            res.check(max(e) / min(e) <= ratio, f"q L2 errors at T={T_list} within {ratio:g}x (p={p}, n_el={n}): "
                      + ", ".join(f"{v:.3e}" for v in e))
    first = {k: min(v, key=lambda r: r.T) for k, v in groups.items()}
    linear = [r for (n, p), r in first.items() if p == 1]
    cubic = [r for (n, p), r in first.items() if p == 3]
    if linear and cubic:
        f = max(linear, key=lambda r: r.n_el)
        c = min(cubic, key=lambda r: abs(r.dofs - f.dofs))
        fac = cfg.float("checks", "equal_dof_factor")
        res.check(f.l2 >= fac * c.l2, f"equal-DOF comparison: p=3 n_el={c.n_el} ({c.dofs} dofs) q error {c.l2:.3e} vs "
                  f"p=1 n_el={f.n_el} ({f.dofs} dofs) {f.l2:.3e}, ratio {f.l2 / c.l2:.1f} >= {fac:g}")
    return res


def sup_distance(space: DgSpace, state, target):
    """Max over volume quadrature points of |c_h - c*| and |q_h - q*|, and min of q_h."""
    dc = dq = 0.0
    qmin = math.inf
    C, Q = space.local(state.C), space.local(state.Q)
    for blk in space.blocks:
        B = space.block_values(blk)
        cv = contract(B, C[blk.elements])
        qv = contract(B, Q[blk.elements])
        dc = max(dc, float(np.abs(cv - target[0]).max()))
        dq = max(dq, float(np.abs(qv - target[1]).max()))
        qmin = min(qmin, float(qv.min()))
    return dc, dq, qmin


def run_equilibrium_wavefront(cfg: ExperimentConfig, res: ScenarioResult | None = None) -> ScenarioResult:
    """Front invading the healthy state; distance from the stable equilibrium over time."""
    res = res if res is not None else ScenarioResult(True)
    n = cfg.n_elements[0]
    mesh = build_mesh(cfg, n)
    params = cfg.params(mesh)
    diag = model.diagnostics(params)
    if not diag.wave_condition:
        raise model.WaveConditionError("wave condition k0*k12 > k1t*k1 fails; no front to follow")
    dt = cfg.floats("discretization", "dt")[0]
    T = cfg.floats("discretization", "final_time")[0]
    scheme = scheme_from(cfg, dt)
    tol = cfg.float("checks", "equilibrium_tolerance")
    checked = cfg.ints("checks", "equilibrium_degrees")
    rows = []
    for p in cfg.degrees:
        space = DgSpace(mesh, p)
        system = build_system(space, params, cfg.float("discretization", "gamma0"))
        series = []

        def watch(state, series=series):
            series.append((state.t, *sup_distance(space, state, diag.stable_eq)))
        cbs = [watch]
        if cfg.snapshot_stride > 0:
            cbs.append(SnapshotWriter(space, os.path.join(cfg.output, "snapshots"), f"p{p}", cfg.snapshot_stride))
        solve_transient(system, scheme, initial_state(space, params.c_0, params.q_0), T, cbs,
                        solver=cfg.get("discretization", "solver"))
        rows += [(p, t, dc, dq, qm) for t, dc, dq, qm in series]
        final = max(series[-1][1], series[-1][2])
        qmin = min(s[3] for s in series)
        res.messages.append(f"INFO p={p}: final sup-distance {final:.3e}; min q_h over run {qmin:.3e}"
                            + ("  (negative undershoot)" if qmin < 0 else ""))
        if p in checked:
            res.check(final < tol, f"p={p} final sup-distance {final:.3e} < {tol:g}")
    res.tables["equilibrium.csv"] = (("p", "t", "dist_c", "dist_q", "min_q"), rows)
    return res


def run_custom(cfg: ExperimentConfig, res: ScenarioResult | None = None) -> ScenarioResult:
    """Plain forward run; norms of c and q over time and optional snapshots."""
    res = res if res is not None else ScenarioResult(True)
    mesh = build_mesh(cfg, cfg.n_elements[0])
    params = cfg.params(mesh)
    dt = cfg.floats("discretization", "dt")[0]
    T = cfg.floats("discretization", "final_time")[0]
    rows = []
    for p in cfg.degrees:
        space = DgSpace(mesh, p)
        system = build_system(space, params, cfg.float("discretization", "gamma0"))

        def watch(state, p=p, space=space):
            c = contract_range(space, state.C)
            q = contract_range(space, state.Q)
            rows.append((p, state.t, *c, *q))
        cbs = [watch]
        if cfg.snapshot_stride > 0:
            cbs.append(SnapshotWriter(space, os.path.join(cfg.output, "snapshots"), f"p{p}", cfg.snapshot_stride))
        solve_transient(system, scheme_from(cfg, dt), initial_state(space, params.c_0, params.q_0), T, cbs,
                        solver=cfg.get("discretization", "solver"))
    res.tables["series.csv"] = (("p", "t", "c_min", "c_max", "q_min", "q_max"), rows)
    return res


def contract_range(space, u):
    loc = space.local(u)
    lo, hi = math.inf, -math.inf
    for blk in space.blocks:
        v = contract(space.block_values(blk), loc[blk.elements])
        lo, hi = min(lo, float(v.min())), max(hi, float(v.max()))
    return lo, hi


RUNNERS = {
    "convergence": run_convergence,
    "p-convergence": run_p_convergence,
    "timestep-convergence": run_timestep_convergence,
    "travelling-wave": run_travelling_wave,
    "equilibrium-wavefront": run_equilibrium_wavefront,
    "custom": run_custom,
}


def banner_params(cfg: ExperimentConfig):
    sol = manufactured_solution(cfg)
    if sol is not None:
        return sol.params(**manufactured_coefficients(cfg))
    if cfg.get("model", "axon_file"):
        # per-element directions need the mesh only for assembly; the diagnostics ignore them
        return cfg.params(mesh=None)
    return cfg.params()


def run_scenario(cfg: ExperimentConfig, out=sys.stdout) -> ScenarioResult:
    """Banner, scenario, outputs. Solver failures leave a partial result with ``failed`` set."""
    banner(cfg, banner_params(cfg), out)
    res = ScenarioResult(True)
    try:
        RUNNERS[cfg.scenario](cfg, res)
    except (SolverError, DivergenceError) as exc:
        res.ok, res.failed = False, True
        res.messages.append(f"FAIL solver: {exc}")
    write_outputs(cfg, res)
    for m in res.messages:
        print(m, file=out)
    return res
