"""Polygonal meshes: topology, sub-triangulation, regularity audit and file IO."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist

INTERIOR, DIRICHLET, NEUMANN = "I", "D", "N"
_TAG_CODES = {INTERIOR: 0, DIRICHLET: 1, NEUMANN: 2}


class MeshError(ValueError):
    """Invalid element or domain geometry."""


class TopologyError(MeshError):
    """Non-manifold, disconnected or inconsistently oriented mesh."""


class MeshParseError(MeshError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


# ---------------------------------------------------------------- polygons

def signed_area(poly):
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(poly):
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def is_convex(poly, rtol=1e-12):
    """True if every turn of the CCW polygon is left or straight."""
    poly = np.asarray(poly, dtype=float)
    prev = np.roll(poly, 1, axis=0)
    nxt = np.roll(poly, -1, axis=0)
    scale = np.ptp(poly, axis=0).max() ** 2
    return bool(np.all(_cross(prev, poly, nxt) >= -rtol * scale))


def is_simple(poly):
    """Check that no two non-adjacent edges of the polygon intersect."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    if n < 3:
        return False
    if n == 3:
        return abs(signed_area(poly)) > 0
    a = poly
    b = np.roll(poly, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    p1, p2, q1, q2 = a[i], b[i], a[j], b[j]
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    scale = np.ptp(poly, axis=0).max() ** 2
    eps = 1e-14 * scale
    proper = (((d1 > eps) & (d2 < -eps)) | ((d1 < -eps) & (d2 > eps))) & \
             (((d3 > eps) & (d4 < -eps)) | ((d3 < -eps) & (d4 > eps)))
    if proper.any():
        return False
    # repeated vertices make the boundary touch itself
    _, counts = np.unique(np.round(poly / math.sqrt(scale), 13), axis=0, return_counts=True)
    return bool(np.all(counts == 1))


def _point_in_triangle(p, a, b, c, eps):
    return (_cross(a, b, p) >= -eps) & (_cross(b, c, p) >= -eps) & (_cross(c, a, p) >= -eps)


def ear_clip(poly):
    """Ear-clipping triangulation of a simple CCW polygon.

    Returns an array of triangles with shape (n - 2, 3, 2) after dropping
    collinear vertices.
    """
    poly = np.asarray(poly, dtype=float)
    scale = np.ptp(poly, axis=0).max() ** 2
    eps = 1e-13 * scale
    idx = list(range(len(poly)))
    # collinear vertices produce zero-area ears
    changed = True
    while changed and len(idx) > 3:
        changed = False
        for k in range(len(idx)):
            o, a, b = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if abs(_cross(poly[o], poly[a], poly[b])) <= eps:
                idx.pop(k)
                changed = True
                break
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(poly) ** 2:
            raise MeshError("ear clipping failed; polygon is not simple")
        m = len(idx)
        for k in range(m):
            o, a, b = idx[k - 1], idx[k], idx[(k + 1) % m]
            if _cross(poly[o], poly[a], poly[b]) <= eps:
                continue
            others = [v for v in idx if v not in (o, a, b)]
            if others:
                inside = _point_in_triangle(poly[others], poly[o], poly[a], poly[b], eps)
                # vertices coinciding with ear corners are not blockers
                if inside.any():
                    continue
            tris.append(poly[[o, a, b]])
            idx.pop(k)
            break
        else:
            raise MeshError("ear clipping found no ear; polygon is not simple")
    tris.append(poly[idx])
    return np.array(tris)


def subtriangulate_polygon(poly):
    """Centroid fan for convex polygons, ear clipping otherwise."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    if n < 3:
        raise MeshError("polygon needs at least 3 vertices")
    if n == 3:
        return poly[None].copy()
    if is_convex(poly):
        c = polygon_centroid(poly)
        nxt = np.roll(poly, -1, axis=0)
        return np.stack([np.broadcast_to(c, poly.shape), poly, nxt], axis=1)
    return ear_clip(poly)


# ---------------------------------------------------------------- faces

@dataclass(frozen=True)
class Face:
    vertices: tuple[int, int]
    normal: np.ndarray        # unit, outward from owner
    owner: int
    neighbor: int | None
    length: float
    tag: str                  # "I", "D" or "N"

    @property
    def is_interior(self):
        return self.neighbor is not None


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def _split_hanging(edges, vertices):
    """Split unmatched edges at vertices that lie strictly inside them."""
    lonely = [k for k, v in edges.items() if len(v) == 1]
    if not lonely:
        return edges
    cand = np.unique(np.array(lonely).ravel())
    cpts = vertices[cand]
    out = {k: v for k, v in edges.items() if len(v) != 1}
    for key in lonely:
        (e, a, b), = edges[key]
        pa, pb = vertices[a], vertices[b]
        d = pb - pa
        L2 = float(d @ d)
        rel = cpts - pa
        s = rel @ d / L2
        dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / math.sqrt(L2)
        on = (s > 1e-12) & (s < 1 - 1e-12) & (dist < 1e-12 * math.sqrt(L2))
        chain = [a] + [int(v) for v in cand[on][np.argsort(s[on])]] + [b]
        for u, w in zip(chain[:-1], chain[1:]):
            out.setdefault(_edge_key(u, w), []).append((e, u, w))
    return out


def build_face_topology(elements, vertices, boundary_tags=None, default_tag=NEUMANN):
    """Derive the face list from element edge segments.

    Shared edges become interior faces (owner = first element met), the
    rest are boundary faces tagged from ``boundary_tags`` keyed by sorted
    vertex pair.
    """
    vertices = np.asarray(vertices, dtype=float)
    boundary_tags = boundary_tags or {}
    edges: dict[tuple[int, int], list] = {}
    for e, poly in enumerate(elements):
        poly = [int(v) for v in poly]
        for a, b in zip(poly, poly[1:] + poly[:1]):
            edges.setdefault(_edge_key(a, b), []).append((e, a, b))
    edges = _split_hanging(edges, vertices)

    faces = []
    for key, uses in edges.items():
        if len(uses) > 2:
            raise TopologyError(f"edge {key} shared by {len(uses)} elements")
        e, a, b = uses[0]
        d = vertices[b] - vertices[a]
        length = float(np.hypot(d[0], d[1]))
        if length == 0.0:
            raise MeshError(f"zero-length edge {key}")
        normal = np.array([d[1], -d[0]]) / length
        if len(uses) == 2:
            e2, a2, b2 = uses[1]
            if (a2, b2) != (b, a):
                raise TopologyError(f"inconsistent orientation on edge {key}")
            if e2 == e:
                raise TopologyError(f"element {e} uses edge {key} twice")
            faces.append(Face((a, b), normal, e, e2, length, INTERIOR))
        else:
            tag = boundary_tags.get(key, default_tag)
            if tag not in (DIRICHLET, NEUMANN):
                raise MeshError(f"unknown boundary tag {tag!r}")
            faces.append(Face((a, b), normal, e, None, length, tag))
    return faces


# ---------------------------------------------------------------- mesh

@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Polygonal partition of a 2D domain.

    ``elements`` hold counter-clockwise vertex indices. Boundary faces not
    listed in ``boundary_tags`` get ``default_tag``.
    """
    vertices: np.ndarray
    elements: tuple
    boundary_tags: Mapping[tuple[int, int], str] = field(default_factory=dict)
    default_tag: str = NEUMANN

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        els = []
        for k, poly in enumerate(self.elements):
            poly = np.array(poly, dtype=np.int64)
            if poly.ndim != 1 or len(poly) < 3:
                raise MeshError(f"element {k} has fewer than 3 vertices")
            if poly.min() < 0 or poly.max() >= len(v):
                raise MeshError(f"element {k} references a missing vertex")
            poly.setflags(write=False)
            els.append(poly)
        object.__setattr__(self, "elements", tuple(els))
        tags = {_edge_key(int(a), int(b)): t for (a, b), t in dict(self.boundary_tags).items()}
        object.__setattr__(self, "boundary_tags", tags)
        for k, poly in enumerate(els):
            if signed_area(v[poly]) <= 0:
                raise MeshError(f"element {k} is not counter-clockwise with positive area")

    @property
    def n_elements(self):
        return len(self.elements)

    def polygon(self, k):
        return self.vertices[self.elements[k]]

    def validate(self):
        """Check the expensive invariants (simplicity, face usage)."""
        for k in range(self.n_elements):
            if not is_simple(self.polygon(k)):
                raise MeshError(f"element {k} is not a simple polygon")
        _ = self.faces
        return self

    @cached_property
    def faces(self) -> list[Face]:
        return build_face_topology(self.elements, self.vertices, self.boundary_tags, self.default_tag)

    @cached_property
    def face_arrays(self):
        """Vectorised face data: owner, neighbor (-1 on boundary), normals, lengths, tag codes, endpoints."""
        f = self.faces
        return dict(
            owner=np.array([x.owner for x in f], dtype=np.int64),
            neighbor=np.array([-1 if x.neighbor is None else x.neighbor for x in f], dtype=np.int64),
            normal=np.array([x.normal for x in f]).reshape(-1, 2),
            length=np.array([x.length for x in f]),
            tag=np.array([_TAG_CODES[x.tag] for x in f], dtype=np.int8),
            ends=np.array([[self.vertices[x.vertices[0]], self.vertices[x.vertices[1]]] for x in f]).reshape(-1, 2, 2),
        )

    @cached_property
    def areas(self):
        return np.array([signed_area(self.polygon(k)) for k in range(self.n_elements)])

    @cached_property
    def centroids(self):
        return np.array([polygon_centroid(self.polygon(k)) for k in range(self.n_elements)])

    @cached_property
    def diameters(self):
        return np.array([element_diameter(self.polygon(k)) for k in range(self.n_elements)])

    @cached_property
    def perimeters(self):
        out = np.empty(self.n_elements)
        for k in range(self.n_elements):
            p = self.polygon(k)
            out[k] = np.hypot(*(np.roll(p, -1, axis=0) - p).T).sum()
        return out

    @cached_property
    def subtriangulation(self) -> list[np.ndarray]:
        return subtriangulate(self)

    @property
    def h(self):
        return mesh_size(self)

    def with_boundary_tags(self, rule: str | Callable[[np.ndarray, np.ndarray], str]):
        """Return a copy with every boundary face tagged.

        ``rule`` is a tag string or a callable ``(midpoint, normal) -> tag``.
        """
        tags = {}
        for f in self.faces:
            if f.is_interior:
                continue
            if callable(rule):
                mid = self.vertices[list(f.vertices)].mean(axis=0)
                tags[_edge_key(*f.vertices)] = rule(mid, f.normal)
            else:
                tags[_edge_key(*f.vertices)] = rule
        return PolyMesh(self.vertices, self.elements, tags, self.default_tag)

    def counts(self):
        nint = sum(f.is_interior for f in self.faces)
        return nint, len(self.faces) - nint

    def same_as(self, other, atol=1e-15):
        if self.n_elements != other.n_elements or self.vertices.shape != other.vertices.shape:
            return False
        if not np.allclose(self.vertices, other.vertices, rtol=0, atol=atol):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.elements, other.elements))


def element_diameter(poly):
    """Largest distance between two vertices of the polygon."""
    poly = np.asarray(poly, dtype=float)
    return float(pdist(poly).max())


def mesh_size(mesh: PolyMesh):
    return float(mesh.diameters.max())


def subtriangulate(mesh: PolyMesh):
    """Per-element triangles (m_K, 3, 2) covering each element exactly."""
    return [subtriangulate_polygon(mesh.polygon(k)) for k in range(mesh.n_elements)]


def triangle_areas(tris):
    tris = np.asarray(tris)
    return 0.5 * _cross(tris[:, 0], tris[:, 1], tris[:, 2])


# ---------------------------------------------------------------- regularity

@dataclass
class RegularityReport:
    shape_ratios: np.ndarray     # |K| / h_K^2 per element
    contact_ratios: np.ndarray   # |F| / h_K per face (smallest over adjacent elements)
    floor: float
    flagged: np.ndarray          # element ids below floor

    @property
    def min_shape(self):
        return float(self.shape_ratios.min())

    @property
    def min_contact(self):
        return float(self.contact_ratios.min()) if len(self.contact_ratios) else math.inf

    def summary(self):
        return (f"elements={len(self.shape_ratios)} min|K|/h_K^2={self.min_shape:.4g} "
                f"min|F|/h_K={self.min_contact:.4g} flagged={len(self.flagged)} (floor {self.floor})")


def check_regularity(mesh: PolyMesh, floor=0.01):
    hk = mesh.diameters
    shape = mesh.areas / hk**2
    fa = mesh.face_arrays
    contact = fa["length"] / hk[fa["owner"]]
    interior = fa["neighbor"] >= 0
    contact[interior] = np.minimum(contact[interior], fa["length"][interior] / hk[fa["neighbor"][interior]])
    flagged = np.flatnonzero(shape < floor)
    return RegularityReport(shape, contact, floor, flagged)


# ---------------------------------------------------------------- io

def save_mesh(mesh: PolyMesh, path):
    lines = ["polymesh 2d", f"vertices {len(mesh.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"elements {mesh.n_elements}")
    lines += [" ".join(str(int(v)) for v in poly) for poly in mesh.elements]
    bfaces = [f for f in mesh.faces if not f.is_interior]
    lines.append(f"boundary {len(bfaces)}")
    lines += [f"{f.vertices[0]} {f.vertices[1]} {f.tag}" for f in bfaces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> PolyMesh:
    raw = Path(path).read_text().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(raw)]
    rows = [(i, t) for i, t in rows if t and not t[0].startswith("#")]
    if not rows or rows[0][1] != ["polymesh", "2d"]:
        raise MeshParseError(rows[0][0] if rows else 1, "expected header 'polymesh 2d'")
    pos = 1

    def section(name):
        nonlocal pos
        if pos >= len(rows):
            raise MeshParseError(rows[-1][0], f"missing section '{name}'")
        lineno, tok = rows[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshParseError(lineno, f"expected '{name} <count>'")
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshParseError(lineno, f"bad count {tok[1]!r}") from None
        body = rows[pos + 1: pos + 1 + n]
        if len(body) < n:
            raise MeshParseError(rows[-1][0], f"section '{name}' truncated")
        pos += 1 + n
        return body

    verts = []
    for lineno, tok in section("vertices"):
        if len(tok) != 2:
            raise MeshParseError(lineno, "vertex needs two coordinates")
        try:
            verts.append((float(tok[0]), float(tok[1])))
        except ValueError:
            raise MeshParseError(lineno, "non-numeric coordinate") from None
    nv = len(verts)
    elements = []
    for lineno, tok in section("elements"):
        try:
            poly = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError(lineno, "non-integer vertex index") from None
        if len(poly) < 3:
            raise MeshParseError(lineno, "element needs at least 3 vertices")
        bad = [v for v in poly if v < 0 or v >= nv]
        if bad:
            raise MeshParseError(lineno, f"element references missing vertex {bad[0]}")
        elements.append(poly)
    tags = {}
    if pos < len(rows):
        for lineno, tok in section("boundary"):
            if len(tok) != 3 or tok[2] not in (DIRICHLET, NEUMANN):
                raise MeshParseError(lineno, "boundary line must be 'v0 v1 D|N'")
            try:
                a, b = int(tok[0]), int(tok[1])
            except ValueError:
                raise MeshParseError(lineno, "non-integer vertex index") from None
            tags[_edge_key(a, b)] = tok[2]
    if pos < len(rows):
        raise MeshParseError(rows[pos][0], "unexpected trailing content")
    try:
        return PolyMesh(np.array(verts).reshape(-1, 2), tuple(elements), tags)
    except MeshError as exc:
        raise MeshParseError(rows[0][0], str(exc)) from exc
