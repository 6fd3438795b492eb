"""Mesh generators: Lloyd-relaxed clipped Voronoi, structured grids, disk
triangulations and greedy agglomeration of triangle meshes."""
from __future__ import annotations

import heapq
import math
from collections import defaultdict

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, Voronoi, cKDTree

from .mesh import (NEUMANN, MeshError, PolyMesh, TopologyError, _edge_key,
                   polygon_centroid, signed_area)


def _check_rect(domain):
    x0, x1, y0, y1 = map(float, domain)
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise MeshError(f"invalid rectangle {domain!r}")
    return x0, x1, y0, y1


def _reflect(pts, rect):
    x0, x1, y0, y1 = rect
    x, y = pts[:, 0], pts[:, 1]
    return np.vstack([
        pts,
        np.column_stack([2 * x0 - x, y]),
        np.column_stack([2 * x1 - x, y]),
        np.column_stack([x, 2 * y0 - y]),
        np.column_stack([x, 2 * y1 - y]),
    ])


def _voronoi(pts, rect):
    vor = Voronoi(_reflect(pts, rect))
    regions = []
    for i in range(len(pts)):
        reg = vor.regions[vor.point_region[i]]
        if not reg or -1 in reg:
            raise MeshError("unbounded Voronoi cell for an interior generator")
        regions.append(list(reg))
    return vor.vertices, regions


def _centroids(coords, regions):
    """Polygon centroids of ragged vertex lists in one vectorised pass."""
    lens = np.array([len(r) for r in regions])
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
    flat = np.concatenate(regions)
    nxt_idx = np.arange(len(flat)) + 1
    nxt_idx[starts + lens - 1] = starts
    p = coords[flat]
    q = p[nxt_idx]
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    a = np.add.reduceat(cross, starts)
    cx = np.add.reduceat((p[:, 0] + q[:, 0]) * cross, starts)
    cy = np.add.reduceat((p[:, 1] + q[:, 1]) * cross, starts)
    return np.column_stack([cx, cy]) / (3.0 * a[:, None])


def _merge_vertices(coords, regions, rect, tol):
    """Snap to the rectangle, merge coincident vertices, renumber compactly."""
    x0, x1, y0, y1 = rect
    c = coords.copy()
    for col, lo, hi in ((0, x0, x1), (1, y0, y1)):
        c[np.abs(c[:, col] - lo) < tol, col] = lo
        c[np.abs(c[:, col] - hi) < tol, col] = hi
    used = sorted({v for r in regions for v in r})
    rep = {v: v for v in used}
    tree = cKDTree(c[used])
    for i, j in sorted(tree.query_pairs(tol)):
        a, b = used[i], used[j]
        ra, rb = rep[a], rep[b]
        while rep[ra] != ra:
            ra = rep[ra]
        while rep[rb] != rb:
            rb = rep[rb]
        if ra != rb:
            rep[max(ra, rb)] = min(ra, rb)

    def root(v):
        while rep[v] != v:
            v = rep[v]
        return v

    new_index: dict[int, int] = {}
    verts = []
    elements = []
    for reg in regions:
        poly = [root(v) for v in reg]
        poly = [v for k, v in enumerate(poly) if v != poly[k - 1]]
        if signed_area(c[poly]) < 0:
            poly = poly[::-1]
        # rotate so that element lists are reproducible
        out = []
        for v in poly:
            if v not in new_index:
                new_index[v] = len(verts)
                verts.append(c[v])
            out.append(new_index[v])
        elements.append(out)
    return np.array(verts), elements


def generate_voronoi_mesh(domain=(0.0, 1.0, 0.0, 1.0), n_elements=100, seed=0,
                          lloyd_iters=100, boundary_tag=NEUMANN):
    """Centroidal-Voronoi-like polygonal mesh of an axis-aligned rectangle.

    Generators are reflected across the four sides so that the Voronoi
    cells of the originals are clipped exactly to the rectangle, then moved
    to their cell centroids ``lloyd_iters`` times.

    Parameters
    ----------
    domain : (x0, x1, y0, y1)
    n_elements : int
    seed : int
        Seed of the generator sampling; equal seeds give identical meshes.
    lloyd_iters : int
    boundary_tag : {"D", "N"}
        Tag assigned to every boundary face.
    """
    rect = _check_rect(domain)
    if n_elements < 1:
        raise MeshError("n_elements must be >= 1")
    x0, x1, y0, y1 = rect
    if n_elements == 1:
        verts = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        return PolyMesh(verts, ([0, 1, 2, 3],), default_tag=boundary_tag)
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(x0, x1, n_elements), rng.uniform(y0, y1, n_elements)])
    for _ in range(lloyd_iters):
        coords, regions = _voronoi(pts, rect)
        pts = _centroids(coords, regions)
    coords, regions = _voronoi(pts, rect)
    scale = max(x1 - x0, y1 - y0)
    verts, elements = _merge_vertices(coords, regions, rect, 1e-12 * scale)
    return PolyMesh(verts, tuple(elements), default_tag=boundary_tag)


def structured_quad_mesh(nx, ny, domain=(0.0, 1.0, 0.0, 1.0), boundary_tag=NEUMANN):
    x0, x1, y0, y1 = _check_rect(domain)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    elements = tuple([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
                     for j in range(ny) for i in range(nx))
    return PolyMesh(verts, elements, default_tag=boundary_tag)


def structured_triangle_mesh(nx, ny, domain=(0.0, 1.0, 0.0, 1.0), boundary_tag=NEUMANN):
    quads = structured_quad_mesh(nx, ny, domain, boundary_tag)
    elements = []
    for a, b, c, d in quads.elements:
        elements += [[a, b, c], [a, c, d]]
    return PolyMesh(quads.vertices, tuple(elements), default_tag=boundary_tag)


def disk_triangle_mesh(n_triangles, radius=1.0, center=(0.0, 0.0), seed=0, boundary_tag=NEUMANN):
    """Delaunay triangulation of a polygonal disk with exactly ``n_triangles`` triangles.

    With ``b`` points on the circle and ``m`` interior points the Delaunay
    triangulation has ``2m + b - 2`` triangles; ``b`` and ``m`` are chosen
    to hit the target and the interior points come from a jittered
    hexagonal lattice.
    """
    if n_triangles < 4:
        raise MeshError("need at least 4 triangles")
    rng = np.random.default_rng(seed)
    area = math.pi * radius**2
    ell = math.sqrt(4.0 * area / n_triangles / math.sqrt(3.0))
    b = max(8, int(round(2 * math.pi * radius / ell)))
    if (n_triangles + 2 - b) % 2:
        b += 1
    m = (n_triangles + 2 - b) // 2
    if m < 1:
        raise MeshError("too few triangles for a disk mesh")
    theta = 2 * math.pi * np.arange(b) / b
    ring = np.column_stack([np.cos(theta), np.sin(theta)]) * radius
    inner_r = radius * math.cos(math.pi / b)

    def lattice(spacing):
        k = int(radius / spacing) + 2
        i, j = np.meshgrid(np.arange(-k, k + 1), np.arange(-k, k + 1), indexing="ij")
        p = np.column_stack([(i + 0.5 * (j % 2)).ravel() * spacing,
                             j.ravel() * spacing * math.sqrt(3) / 2])
        r = np.hypot(p[:, 0], p[:, 1])
        return p[r < inner_r - 0.45 * spacing]

    lo, hi = 0.3 * ell, 3.0 * ell
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if len(lattice(mid)) >= m:
            lo = mid
        else:
            hi = mid
    pts = lattice(lo)
    pts = pts[np.argsort(np.hypot(pts[:, 0], pts[:, 1]), kind="stable")[:m]]
    pts = pts + rng.uniform(-0.1, 0.1, pts.shape) * lo
    allpts = np.vstack([ring, pts]) + np.asarray(center, dtype=float)
    tri = Delaunay(allpts)
    simplices = tri.simplices
    verts = allpts
    elements = []
    for s in simplices:
        s = list(map(int, s))
        if signed_area(verts[s]) < 0:
            s = s[::-1]
        elements.append(s)
    return PolyMesh(verts, tuple(elements), default_tag=boundary_tag)


# ---------------------------------------------------------------- agglomeration

def _adjacency(mesh):
    fa = mesh.face_arrays
    inner = fa["neighbor"] >= 0
    i, j = fa["owner"][inner], fa["neighbor"][inner]
    n = mesh.n_elements
    graph = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    nbrs = [[] for _ in range(n)]
    for a, b in zip(i.tolist(), j.tolist()):
        nbrs[a].append(b)
        nbrs[b].append(a)
    return graph, nbrs


def _grow_clusters(mesh, nbrs, target, rng):
    n = mesh.n_elements
    cent = mesh.centroids
    areas = mesh.areas
    seeds = rng.choice(n, size=target, replace=False)
    tree = cKDTree(cent)
    for _ in range(10):
        _, lab = cKDTree(cent[seeds]).query(cent)
        sums = np.zeros((target, 2))
        np.add.at(sums, lab, cent * areas[:, None])
        wts = np.bincount(lab, weights=areas, minlength=target)
        keep = wts > 0
        means = cent[seeds].copy()
        means[keep] = sums[keep] / wts[keep, None]
        _, new = tree.query(means)
        if len(set(new.tolist())) < target:
            break
        seeds = new
    seed_xy = cent[seeds]
    label = np.full(n, -1, dtype=np.int64)
    frontier = [[] for _ in range(target)]
    carea = np.zeros(target)
    for c, t in enumerate(seeds):
        label[t] = c
        carea[c] = areas[t]
    for c, t in enumerate(seeds):
        for nb in nbrs[t]:
            if label[nb] < 0:
                d = float(np.sum((cent[nb] - seed_xy[c]) ** 2))
                heapq.heappush(frontier[c], (d, nb))
    heap = [(carea[c], c) for c in range(target)]
    heapq.heapify(heap)
    while heap:
        _, c = heapq.heappop(heap)
        fr = frontier[c]
        while fr and label[fr[0][1]] >= 0:
            heapq.heappop(fr)
        if not fr:
            continue
        _, t = heapq.heappop(fr)
        label[t] = c
        carea[c] += areas[t]
        for nb in nbrs[t]:
            if label[nb] < 0:
                d = float(np.sum((cent[nb] - seed_xy[c]) ** 2))
                heapq.heappush(fr, (d, nb))
        heapq.heappush(heap, (carea[c], c))
    if (label < 0).any():
        raise TopologyError("agglomeration left unassigned triangles")
    return label


def _boundary_loops(tris_of, mesh):
    """Directed boundary edges of a set of CCW triangles and their loops."""
    count = defaultdict(int)
    directed = {}
    for t in tris_of:
        poly = mesh.elements[t].tolist()
        for a, b in zip(poly, poly[1:] + poly[:1]):
            count[_edge_key(a, b)] += 1
            directed[_edge_key(a, b)] = (a, b)
    edges = [directed[k] for k, c in count.items() if c == 1]
    return edges


def _cluster_problems(mesh, members):
    """Return (pinch vertices, loops) for one cluster."""
    edges = _boundary_loops(members, mesh)
    out_deg = defaultdict(list)
    for a, b in edges:
        out_deg[a].append(b)
    pinches = [v for v, nx in out_deg.items() if len(nx) > 1]
    loops = []
    if not pinches:
        nxt = {a: nx[0] for a, nx in out_deg.items()}
        seen = set()
        for start in nxt:
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            v = nxt[start]
            while v != start:
                loop.append(v)
                seen.add(v)
                v = nxt[v]
            loops.append(loop)
    return pinches, loops


def _repair(mesh, nbrs, label, max_passes=100):
    n = mesh.n_elements
    vert_tris = defaultdict(list)
    for t, poly in enumerate(mesh.elements):
        for v in poly.tolist():
            vert_tris[v].append(t)
    for _ in range(max_passes):
        changed = False
        members = defaultdict(list)
        for t, c in enumerate(label.tolist()):
            members[c].append(t)
        for c, tris in list(members.items()):
            tris = [t for t in tris if label[t] == c]
            if not tris:
                continue
            # split disconnected clusters: keep the largest piece
            tset = set(tris)
            comps = []
            left = set(tris)
            while left:
                s = left.pop()
                comp = [s]
                stack = [s]
                while stack:
                    u = stack.pop()
                    for w in nbrs[u]:
                        if w in left:
                            left.remove(w)
                            comp.append(w)
                            stack.append(w)
                comps.append(comp)
            if len(comps) > 1:
                comps.sort(key=len, reverse=True)
                for comp in comps[1:]:
                    _give_away(comp, c, label, nbrs)
                changed = True
                continue
            pinches, loops = _cluster_problems(mesh, tris)
            if pinches:
                v = pinches[0]
                fan = [t for t in vert_tris[v] if label[t] == c]
                groups = _fans(fan, nbrs)
                groups.sort(key=len)
                for g in groups[:-1]:
                    _give_away(g, c, label, nbrs)
                changed = True
                continue
            if len(loops) > 1:
                verts = mesh.vertices
                loops.sort(key=lambda lp: signed_area(verts[lp]), reverse=True)
                # the outer loop is the only counter-clockwise one
                for hole in loops[1:]:
                    hole_edges = {_edge_key(a, b) for a, b in zip(hole, hole[1:] + hole[:1])}
                    start = []
                    for t in tset:
                        for w in nbrs[t]:
                            if label[w] != c and _shared_edge(mesh, t, w) in hole_edges:
                                start.append(w)
                    region = set(start)
                    stack = list(start)
                    while stack:
                        u = stack.pop()
                        for w in nbrs[u]:
                            if label[w] != c and w not in region:
                                region.add(w)
                                stack.append(w)
                    for t in region:
                        label[t] = c
                changed = True
        if not changed:
            break
    else:
        raise MeshError("agglomeration repair did not converge")
    # compact labels
    _, label = np.unique(label, return_inverse=True)
    return label


def _shared_edge(mesh, t, w):
    a = set(mesh.elements[t].tolist())
    b = [v for v in mesh.elements[w].tolist() if v in a]
    return _edge_key(b[0], b[1]) if len(b) == 2 else None


def _fans(tris, nbrs):
    left = set(tris)
    groups = []
    while left:
        s = left.pop()
        g = [s]
        stack = [s]
        while stack:
            u = stack.pop()
            for w in nbrs[u]:
                if w in left:
                    left.remove(w)
                    g.append(w)
                    stack.append(w)
        groups.append(g)
    return groups


def _give_away(tris, c, label, nbrs):
    """Move triangles of cluster ``c`` to the adjacent cluster with most shared edges."""
    votes = defaultdict(int)
    tset = set(tris)
    for t in tris:
        for w in nbrs[t]:
            if w not in tset and label[w] != c:
                votes[int(label[w])] += 1
    if not votes:
        return
    best = min(votes, key=lambda k: (-votes[k], k))
    for t in tris:
        label[t] = best


def agglomerate(tri_mesh: PolyMesh, target_elements, seed=0):
    """Merge the triangles of a conforming triangulation into ~``target_elements`` polygons.

    Clusters are grown greedily from k-means-placed seeds, always extending
    the currently smallest cluster; clusters with holes, pinched vertices or
    several components are then repaired so that each one is bounded by a
    single simple loop.
    """
    if any(len(e) != 3 for e in tri_mesh.elements):
        raise MeshError("agglomerate expects a triangle mesh")
    n = tri_mesh.n_elements
    if not 1 <= target_elements <= n:
        raise MeshError("target must lie in [1, number of triangles]")
    graph, nbrs = _adjacency(tri_mesh)
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise TopologyError(f"input mesh has {ncomp} disconnected components")
    if target_elements == n:
        return tri_mesh
    rng = np.random.default_rng(seed)
    label = _grow_clusters(tri_mesh, nbrs, target_elements, rng)
    label = _repair(tri_mesh, nbrs, label)
    nclus = int(label.max()) + 1
    groups = [[] for _ in range(nclus)]
    for t, c in enumerate(label.tolist()):
        groups[c].append(t)
    polys = []
    for tris in groups:
        pinches, loops = _cluster_problems(tri_mesh, tris)
        if pinches or len(loops) != 1:
            raise MeshError("agglomerated cluster is not bounded by a single loop")
        loop = loops[0]
        k = loop.index(min(loop))
        polys.append(loop[k:] + loop[:k])
    used = sorted({v for p in polys for v in p})
    remap = {v: i for i, v in enumerate(used)}
    verts = tri_mesh.vertices[used]
    elements = tuple([remap[v] for v in p] for p in polys)
    tags = {}
    for f in tri_mesh.faces:
        if not f.is_interior:
            a, b = f.vertices
            tags[_edge_key(remap[a], remap[b])] = f.tag
    return PolyMesh(verts, elements, tags, tri_mesh.default_tag)
