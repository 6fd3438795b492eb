"""Command line entry point: ``solver run|mesh|rates``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as config_mod
from .analysis import fit_rates, read_records
from .harness import run_scenario
from .mesh import DIRICHLET, NEUMANN, MeshError, check_regularity, load_mesh, save_mesh
from .meshgen import agglomerate, disk_triangle_mesh, generate_voronoi_mesh
from .model import WaveConditionError


def _cmd_run(args):
    overrides = {}
    if args.out is not None:
        overrides[("experiment", "output")] = os.path.abspath(args.out)
    if args.seed is not None:
        overrides[("experiment", "seed")] = args.seed
    if args.snapshots is not None:
        overrides[("experiment", "snapshot_stride")] = args.snapshots
    cfg = config_mod.load_config(args.config, overrides=overrides)
    res = run_scenario(cfg)
    if res.failed:
        return 2
    return 0 if res.ok else 1


def _cmd_mesh(args):
    if args.mesh_cmd == "gen":
        if args.disk:
            mesh = disk_triangle_mesh(args.n, args.radius, (args.cx, args.cy), args.seed, args.boundary)
        else:
            mesh = generate_voronoi_mesh(tuple(args.domain), args.n, seed=args.seed, lloyd_iters=args.lloyd_iters,
                                         boundary_tag=args.boundary)
        save_mesh(mesh, args.output)
        print(f"wrote {args.output}: {mesh.n_elements} elements, h = {mesh.h:.4g}")
    elif args.mesh_cmd == "agglomerate":
        mesh = agglomerate(load_mesh(args.input), args.target, seed=args.seed)
        save_mesh(mesh, args.output)
        print(f"wrote {args.output}: {mesh.n_elements} elements")
    else:
        mesh = load_mesh(args.input)
        mesh.validate()
        rep = check_regularity(mesh, args.floor)
        n_int, n_bd = mesh.counts()
        print(f"{mesh.n_elements} elements, {n_int} interior faces, {n_bd} boundary faces, h = {mesh.h:.4g}, "
              f"area = {mesh.areas.sum():.12g}")
        print(rep.summary())
        return 1 if len(rep.flagged) else 0
    return 0


def _cmd_rates(args):
    recs = read_records(args.csv)
    groups = {}
    for r in recs:
        groups.setdefault((r.test, r.p, r.field, r.dt if args.by == "h" else r.n_el), []).append(r)
    print(f"{'test':<22} {'p':>2} {'field':>5} {'norm':>6} {'ls slope':>9}  pairwise")
    for (test, p, fld, _), rs in sorted(groups.items()):
        x = [r.h if args.by == "h" else r.dt for r in rs]
        if len(set(x)) < 2:
            continue
        order = sorted(range(len(rs)), key=lambda i: -x[i])
        for norm in ("l2", "dg", "energy"):
            fit = fit_rates([x[i] for i in order], [getattr(rs[i], norm) for i in order])
            print(f"{test:<22} {p:>2} {fld:>5} {norm:>6} {fit.least_squares:9.3f}  "
                  + " ".join(f"{s:.3f}" for s in fit.pairwise))
    return 0


def make_parser():
    ap = argparse.ArgumentParser(prog="solver", description="PolyDG heterodimer solver")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run an experiment configuration")
    run.add_argument("config")
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--snapshots", type=int, help="write VTK every K steps")
    run.set_defaults(func=_cmd_run)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_cmd", required=True)
    gen = msub.add_parser("gen", help="generate a Voronoi or disk mesh")
    gen.add_argument("output")
    gen.add_argument("-n", type=int, default=100, help="elements (triangles with --disk)")
    gen.add_argument("--domain", type=float, nargs=4, default=[0, 1, 0, 1])
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--lloyd-iters", type=int, default=100)
    gen.add_argument("--boundary", choices=[DIRICHLET, NEUMANN], default=NEUMANN)
    gen.add_argument("--disk", action="store_true")
    gen.add_argument("--radius", type=float, default=1.0)
    gen.add_argument("--cx", type=float, default=0.0)
    gen.add_argument("--cy", type=float, default=0.0)
    agg = msub.add_parser("agglomerate", help="merge triangles into polygons")
    agg.add_argument("input")
    agg.add_argument("output")
    agg.add_argument("--target", type=int, required=True)
    agg.add_argument("--seed", type=int, default=1)
    chk = msub.add_parser("check", help="validate a mesh and report regularity")
    chk.add_argument("input")
    chk.add_argument("--floor", type=float, default=0.01)
    mesh.set_defaults(func=_cmd_mesh)

    rates = sub.add_parser("rates", help="convergence rates from an errors CSV")
    rates.add_argument("csv")
    rates.add_argument("--by", choices=["h", "dt"], default="h")
    rates.set_defaults(func=_cmd_rates)
    return ap


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (config_mod.ConfigError, MeshError, WaveConditionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
