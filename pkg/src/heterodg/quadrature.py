"""Quadrature rules on triangles, segments and polygon sub-triangulations."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, 2) physical coordinates
    weights: np.ndarray  # (n,)

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=64)
def reference_triangle_rule(order: int):
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Gauss-Jacobi (alpha=1) absorbs the Duffy Jacobian in the collapsed
    direction, Gauss-Legendre in the other; exact for total degree ``order``.
    """
    if order < 0:
        raise ValueError("quadrature order must be non-negative")
    n = max(1, (order + 2) // 2)
    ta, wa = roots_jacobi(n, 1.0, 0.0)   # weight (1 - t)
    tb, wb = roots_jacobi(n, 0.0, 0.0)
    u = 0.5 * (1.0 + ta)
    wu = wa / 4.0                        # (1-u) du = (1-t)/2 * dt/2
    v = 0.5 * (1.0 + tb)
    wv = wb / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    x = U
    y = V * (1.0 - U)
    pts = np.column_stack([x.ravel(), y.ravel()])
    pts.setflags(write=False)
    w = W.ravel()
    w.setflags(write=False)
    return pts, w


def triangle_rule(tri, order):
    """Map the reference rule onto a physical triangle given as a (3, 2) array."""
    tri = np.asarray(tri, dtype=float)
    ref, w = reference_triangle_rule(order)
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    jac = abs(e1[0] * e2[1] - e1[1] * e2[0])
    pts = tri[0] + ref[:, :1] * e1 + ref[:, 1:] * e2
    return QuadratureRule(pts, w * jac)


def composite_rule(triangles, order):
    """Composite rule over a stack of triangles with shape (m, 3, 2)."""
    triangles = np.asarray(triangles, dtype=float)
    ref, w = reference_triangle_rule(order)
    e1 = triangles[:, 1] - triangles[:, 0]
    e2 = triangles[:, 2] - triangles[:, 0]
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (triangles[:, None, 0, :]
           + ref[None, :, :1] * e1[:, None, :]
           + ref[None, :, 1:] * e2[:, None, :])
    weights = jac[:, None] * w[None, :]
    return QuadratureRule(pts.reshape(-1, 2), weights.ravel())


@lru_cache(maxsize=64)
def gauss_legendre_unit(n_points: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if n_points < 1:
        raise ValueError("need at least one Gauss point")
    s, w = np.polynomial.legendre.leggauss(n_points)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


def segment_rule(a, b, n_points):
    """Gauss-Legendre rule on the segment [a, b]; exact to degree 2n-1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s, w = gauss_legendre_unit(n_points)
    length = float(np.hypot(*(b - a)))
    pts = a + s[:, None] * (b - a)
    return QuadratureRule(pts, w * length)
