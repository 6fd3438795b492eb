"""Discontinuous modal space of total degree p on a polygonal mesh.

The basis on each element is built from monomials in coordinates centred on
the element bounding box and scaled by its half extents, optionally
orthonormalised in L2(K). Quadrature data (volume rules on the
sub-triangulation and Gauss rules on faces) is precomputed; elements with
the same number of volume points are stacked into blocks so that assembly
runs batched without padding.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .mesh import PolyMesh
from .quadrature import QuadratureRule, composite_rule, gauss_legendre_unit


class ConditioningError(RuntimeError):
    pass


def monomial_exponents(p):
    return np.array([(d - j, j) for d in range(p + 1) for j in range(d + 1)], dtype=np.int64)


def n_local_dofs(p):
    return (p + 1) * (p + 2) // 2


def sample(field, points, t, elements=None):
    """Evaluate a coefficient field at ``points`` (..., 2).

    Fields are callables ``f(x, t)``; elementwise fields (attribute
    ``elementwise = True``) additionally receive the owning element ids.
    Plain numbers are broadcast.
    """
    points = np.asarray(points, dtype=float)
    if callable(field):
        if getattr(field, "elementwise", False):
            if elements is None:
                raise ValueError("elementwise field needs element ids")
            out = field(points, t, elements)
        else:
            out = field(points, t)
        out = np.asarray(out, dtype=float)
        if out.ndim == 0:
            out = np.broadcast_to(out, points.shape[:-1])
        return out
    arr = np.asarray(field, dtype=float)
    return np.broadcast_to(arr, points.shape[:-1] + arr.shape)


def _powers(z, p):
    """z**k for k = 0..p stacked on a trailing axis, by repeated products."""
    out = np.empty(z.shape + (p + 1,))
    out[..., 0] = 1.0
    for k in range(1, p + 1):
        out[..., k] = out[..., k - 1] * z
    return out


def _monomials(xi, eta, exps):
    p = int(exps.max(initial=0))
    return _powers(xi, p)[..., exps[:, 0]] * _powers(eta, p)[..., exps[:, 1]]


def _monomial_grads(xi, eta, exps):
    a, b = exps[:, 0], exps[:, 1]
    p = int(exps.max(initial=0))
    px, py = _powers(xi, p), _powers(eta, p)
    dxi = a * px[..., np.maximum(a - 1, 0)] * py[..., b]
    deta = b * px[..., a] * py[..., np.maximum(b - 1, 0)]
    return dxi, deta


def weighted_gram(w, B, C):
    """sum_q w[e, q] B[e, q, i] C[e, q, j] as an (E, i, j) stack."""
    return np.matmul(B.transpose(0, 2, 1) * w[:, None, :], C)


def contract(B, u):
    """sum_i B[e, ..., i] u[e, i] for batched basis values B (E, Q, Np) or gradients (E, Q, Np, 2)."""
    if B.ndim == 3:
        return np.matmul(B, u[:, :, None])[..., 0]
    return np.matmul(B.transpose(0, 1, 3, 2), u[:, None, :, None])[..., 0]


class DgSpace:
    """Degree-``p`` discontinuous space on ``mesh``.

    Parameters
    ----------
    mesh : PolyMesh
    degree : int
        Polynomial degree p >= 1 (p = 0 is accepted for testing).
    orthonormal : bool
        Orthonormalise each element basis against its mass matrix.
    quad_order : int, optional
        Total degree integrated exactly on every sub-triangle. Defaults to
        ``max(2p + 2, 3p)`` so that the trilinear reaction form is exact.
    face_points : int, optional
        Gauss points per face, default ``p + 2``.
    """

    def __init__(self, mesh: PolyMesh, degree: int, orthonormal=True, quad_order=None, face_points=None):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.mesh = mesh
        self.grad_cache_bytes = 400 * 2**20
        self._grad_cache_used = 0
        self.p = int(degree)
        self.orthonormal = orthonormal
        self.quad_order = int(quad_order if quad_order is not None else max(2 * degree + 2, 3 * degree))
        self.face_points = int(face_points if face_points is not None else degree + 2)
        self.exponents = monomial_exponents(self.p)
        self.n_local = len(self.exponents)
        self.n_elements = mesh.n_elements
        self.n_dofs = self.n_local * self.n_elements
        self.offsets = np.arange(self.n_elements) * self.n_local

        lo = np.array([mesh.polygon(k).min(axis=0) for k in range(mesh.n_elements)])
        hi = np.array([mesh.polygon(k).max(axis=0) for k in range(mesh.n_elements)])
        self.centers = 0.5 * (lo + hi)
        self.scales = 0.5 * (hi - lo)
        self.transforms = np.broadcast_to(np.eye(self.n_local), (self.n_elements, self.n_local, self.n_local)).copy()
        self._build_volume_quadrature()
        if orthonormal:
            self._orthonormalise()

    # ------------------------------------------------------------ basis
    def dofs(self, k):
        return self.offsets[k] + np.arange(self.n_local)

    def _raw(self, elements, points):
        c = self.centers[elements]
        s = self.scales[elements]
        xi = (points[..., 0] - c[..., 0]) / s[..., 0]
        eta = (points[..., 1] - c[..., 1]) / s[..., 1]
        return xi, eta, s

    def _eval_many(self, elements, points):
        """Basis values for ``points`` (E, n, 2) on ``elements`` (E,) -> (E, n, Np)."""
        xi, eta, _ = self._raw(elements[:, None], points)
        m = _monomials(xi, eta, self.exponents)
        return m @ self.transforms[elements]

    def _grad_many(self, elements, points):
        xi, eta, s = self._raw(elements[:, None], points)
        dxi, deta = _monomial_grads(xi, eta, self.exponents)
        T = self.transforms[elements]
        gx = (dxi @ T) / s[..., 0, None]
        gy = (deta @ T) / s[..., 1, None]
        return np.stack([gx, gy], axis=-1)

    def eval_basis(self, element, points):
        """Values of the element's basis functions, shape (n_points, Np)."""
        pts = np.asarray(points, dtype=float).reshape(1, -1, 2)
        return self._eval_many(np.array([element]), pts)[0]

    def eval_grad_basis(self, element, points):
        """Gradients of the element's basis functions, shape (n_points, Np, 2)."""
        pts = np.asarray(points, dtype=float).reshape(1, -1, 2)
        return self._grad_many(np.array([element]), pts)[0]

    def evaluate(self, coeffs, element, points):
        """Evaluate a DG function (global coefficient vector) on one element."""
        return self.eval_basis(element, points) @ coeffs[self.dofs(element)]

    def evaluate_grad(self, coeffs, element, points):
        return np.einsum("nid,i->nd", self.eval_grad_basis(element, points), coeffs[self.dofs(element)])

    # ------------------------------------------------------------ quadrature
    def volume_quadrature(self, element, order=None) -> QuadratureRule:
        return composite_rule(self.mesh.subtriangulation[element], self.quad_order if order is None else order)

    def _build_volume_quadrature(self):
        """Group elements by quadrature size so that every group is a dense batch."""
        rules = [self.volume_quadrature(k) for k in range(self.n_elements)]
        sizes = np.array([len(r.weights) for r in rules])
        self.blocks = []
        for n in np.unique(sizes):
            els = np.flatnonzero(sizes == n)
            pts = np.stack([rules[k].points for k in els])
            wts = np.stack([rules[k].weights for k in els])
            self.blocks.append(QuadBlock(els, pts, wts))

    def _orthonormalise(self):
        for _ in range(2):
            for blk in self.blocks:
                B = self._eval_many(blk.elements, blk.points)
                G = weighted_gram(blk.weights, B, B)
                try:
                    L = np.linalg.cholesky(G)
                except np.linalg.LinAlgError as exc:
                    raise ConditioningError("element mass matrix is not positive definite") from exc
                Linv_T = np.linalg.inv(L).transpose(0, 2, 1)
                self.transforms[blk.elements] = self.transforms[blk.elements] @ Linv_T

    def block_values(self, blk):
        """(g, Q, Np) basis values at the block's quadrature points (cached)."""
        if blk.values is None:
            blk.values = self._eval_many(blk.elements, blk.points)
        return blk.values

    def block_grads(self, blk):
        """(g, Q, Np, 2) basis gradients.

        Cached while the total cached size stays below ``grad_cache_bytes``,
        recomputed on every call beyond that.
        """
        if blk.grads is not None:
            return blk.grads
        g = self._grad_many(blk.elements, blk.points)
        if self._grad_cache_used + g.nbytes <= self.grad_cache_bytes:
            blk.grads = g
            self._grad_cache_used += g.nbytes
        return g

    @cached_property
    def mass_blocks(self):
        out = np.empty((self.n_elements, self.n_local, self.n_local))
        for blk in self.blocks:
            B = self.block_values(blk)
            out[blk.elements] = weighted_gram(blk.weights, B, B)
        return out

    @cached_property
    def faces(self):
        """Face quadrature data in arrays over all faces.

        Keys: ``points`` (F, n, 2), ``weights`` (F, n), ``normal`` (F, 2),
        ``owner``/``neighbor`` (F,), ``tag`` (F,), and owner/neighbor basis
        values and gradients at the face points (zeros for missing neighbors).
        """
        fa = self.mesh.face_arrays
        s, w = gauss_legendre_unit(self.face_points)
        a, b = fa["ends"][:, 0], fa["ends"][:, 1]
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        wts = fa["length"][:, None] * w[None, :]
        owner, nbr = fa["owner"], fa["neighbor"]
        inner = nbr >= 0
        vo = self._eval_many(owner, pts)
        go = self._grad_many(owner, pts)
        vn = np.zeros_like(vo)
        gn = np.zeros_like(go)
        if inner.any():
            vn[inner] = self._eval_many(nbr[inner], pts[inner])
            gn[inner] = self._grad_many(nbr[inner], pts[inner])
        return dict(points=pts, weights=wts, normal=fa["normal"], owner=owner, neighbor=nbr,
                    tag=fa["tag"], length=fa["length"], vals_owner=vo, grads_owner=go,
                    vals_nbr=vn, grads_nbr=gn)

    # ------------------------------------------------------------ projection
    def local(self, coeffs):
        return np.asarray(coeffs).reshape(self.n_elements, self.n_local)

    def l2_project(self, f, t=0.0):
        """Elementwise L2 projection of the field ``f(x, t)``."""
        b = np.empty((self.n_elements, self.n_local))
        for blk in self.blocks:
            fq = sample(f, blk.points, t, blk.element_ids())
            b[blk.elements] = np.einsum("eq,eq,eqi->ei", blk.weights, fq, self.block_values(blk))
        M = self.mass_blocks
        if not self.orthonormal:
            cond = np.linalg.cond(M)
            if not np.all(np.isfinite(cond)) or cond.max() > 1e14:
                raise ConditioningError("element mass matrix is singular to working precision")
        return np.linalg.solve(M, b[..., None])[..., 0].ravel()


class QuadBlock:
    """Elements sharing one quadrature size, with stacked points and weights."""

    def __init__(self, elements, points, weights):
        self.elements = elements
        self.points = points
        self.weights = weights
        self.values = None
        self.grads = None

    def element_ids(self):
        return np.broadcast_to(self.elements[:, None], self.weights.shape)
