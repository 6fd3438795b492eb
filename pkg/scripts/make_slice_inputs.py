"""Write the synthetic slice mesh and per-element axon directions used by
``configs/anisotropic_slice.ini``.

The slice is an agglomerated disk of radius 60 (mm). Fibres run roughly
circumferentially around an off-centre point, with a seeded random tilt per
element standing in for tractography noise.
"""
import argparse
from pathlib import Path

import numpy as np

from heterodg.mesh import save_mesh
from heterodg.meshgen import agglomerate, disk_triangle_mesh

HERE = Path(__file__).resolve().parent


def fibre_directions(centroids, center, tilt_sd, rng):
    d = centroids - np.asarray(center)
    phi = np.arctan2(d[:, 1], d[:, 0]) + np.pi / 2 + rng.normal(0.0, tilt_sd, len(d))
    return np.column_stack([np.cos(phi), np.sin(phi)])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=HERE.parent / "configs" / "data", type=Path)
    ap.add_argument("--triangles", type=int, default=3000)
    ap.add_argument("--elements", type=int, default=400)
    ap.add_argument("--radius", type=float, default=60.0)
    ap.add_argument("--tilt", type=float, default=0.2, help="std of the fibre tilt in radians")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    tri = disk_triangle_mesh(args.triangles, radius=args.radius, seed=args.seed)
    mesh = agglomerate(tri, args.elements, seed=args.seed)
    a = fibre_directions(mesh.centroids, (10.0, -5.0), args.tilt, rng)

    args.out.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, args.out / "slice_mesh.txt")
    lines = ["# ax ay per element, in element order of slice_mesh.txt"]
    lines += [f"{x:.12g} {y:.12g}" for x, y in a]
    (args.out / "slice_axons.txt").write_text("\n".join(lines) + "\n")
    print(f"{mesh.n_elements} elements written to {args.out}")


if __name__ == "__main__":
    main()
