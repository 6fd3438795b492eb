"""Legacy ASCII VTK output of DG fields on the sub-triangulation."""
from __future__ import annotations

import numpy as np

from .dgspace import DgSpace


def subtriangle_fields(space: DgSpace, fields: dict):
    """Points, connectivity and per-point values of each field.

    Every sub-triangle gets its own three points, so the element-local
    evaluation keeps the jumps between elements visible.
    """
    pts, cells, vals = [], [], {k: [] for k in fields}
    base = 0
    for k, tris in enumerate(space.mesh.subtriangulation):
        p = tris.reshape(-1, 2)
        B = space.eval_basis(k, p)
        for name, coeffs in fields.items():
            vals[name].append(B @ np.asarray(coeffs)[space.dofs(k)])
        pts.append(p)
        cells.append(base + np.arange(len(p)).reshape(-1, 3))
        base += len(p)
    return (np.concatenate(pts), np.concatenate(cells),
            {k: np.concatenate(v) for k, v in vals.items()})


def emit_vtk(space: DgSpace, state, path, title="heterodimer"):
    """Write c and q of ``state`` as point data of an unstructured grid."""
    points, cells, vals = subtriangle_fields(space, {"c": state.C, "q": state.Q})
    n, m = len(points), len(cells)
    lines = ["# vtk DataFile Version 3.0", f"{title} t={float(state.t)!r}", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in points.tolist()]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in cells.tolist()]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    lines.append(f"POINT_DATA {n}")
    for name in ("c", "q"):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in vals[name]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_counts(path):
    """(n_points, n_cells) of a file written by :func:`emit_vtk`."""
    n = m = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                n = int(line.split()[1])
            elif line.startswith("CELLS"):
                m = int(line.split()[1])
    return n, m


def read_vtk_scalars(path, name):
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = lines.index(f"SCALARS {name} double 1")
    n = int(next(l for l in lines if l.startswith("POINT_DATA")).split()[1])
    return np.array([float(v) for v in lines[i + 2:i + 2 + n]])
