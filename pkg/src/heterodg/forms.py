"""Assembly of the SIPG system: mass, stiffness, reaction matrices and loads.

All local matrices are computed element- or face-batched and scattered
through coordinate triplets; the results are returned in CSR format.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dgspace import DgSpace, contract, sample, weighted_gram
from .mesh import DIRICHLET, INTERIOR, NEUMANN

_DIR = 1


class CoefficientError(ValueError):
    pass


def harmonic_average(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = a + b
    # H(0, 0) = 0, the limit along a = b
    return np.divide(2.0 * a * b, s, out=np.zeros(np.broadcast(a, b).shape), where=s != 0)


def max_eigenvalue_2x2(D):
    a, b, d = D[..., 0, 0], 0.5 * (D[..., 0, 1] + D[..., 1, 0]), D[..., 1, 1]
    return 0.5 * (a + d) + np.sqrt(0.25 * (a - d) ** 2 + b * b)


def min_eigenvalue_2x2(D):
    a, b, d = D[..., 0, 0], 0.5 * (D[..., 0, 1] + D[..., 1, 0]), D[..., 1, 1]
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)


def penalty_coefficient(tag, d, k, h, p, gamma0=10.0):
    """Face penalty weight.

    ``d``, ``k`` and ``h`` are (owner, neighbor) pairs on interior faces and
    scalars on Dirichlet faces.
    """
    if tag == INTERIOR:
        dh = harmonic_average(*d)
        kh = harmonic_average(*k)
        hh = harmonic_average(*h)
        return gamma0 * max(dh, kh) * p**2 / hh
    if tag == DIRICHLET:
        return gamma0 * max(d, k) * p**2 / h
    if tag == NEUMANN:
        raise ValueError("no penalty is defined on Neumann faces")
    raise ValueError(f"unknown face tag {tag!r}")


@dataclass
class PenaltyParams:
    gamma0: float
    p: int
    d_K: np.ndarray          # per element, sup of the largest eigenvalue of D
    k_K: np.ndarray          # per element, sup of (1 + k12)(k1 + k1t)
    face_gamma: np.ndarray   # per face; zero on Neumann faces


def element_bounds(space: DgSpace, D, k1, k1t, k12):
    d_K = np.empty(space.n_elements)
    k_K = np.empty(space.n_elements)
    for blk in space.blocks:
        ids = blk.element_ids()
        Dq = sample(D, blk.points, 0.0, ids)
        d_K[blk.elements] = max_eigenvalue_2x2(Dq).max(axis=1)
        r = (1.0 + sample(k12, blk.points, 0.0, ids)) * (sample(k1, blk.points, 0.0, ids) + sample(k1t, blk.points, 0.0, ids))
        k_K[blk.elements] = np.abs(r).max(axis=1)
    return d_K, k_K


def compute_penalty(space: DgSpace, D, k1, k1t, k12, gamma0=10.0) -> PenaltyParams:
    d_K, k_K = element_bounds(space, D, k1, k1t, k12)
    h_K = space.mesh.diameters
    fa = space.faces
    o, n = fa["owner"], fa["neighbor"]
    gamma = np.zeros(len(o))
    p2 = max(space.p, 1) ** 2
    inner = n >= 0
    if inner.any():
        oi, ni = o[inner], n[inner]
        dh = harmonic_average(d_K[oi], d_K[ni])
        kh = harmonic_average(k_K[oi], k_K[ni])
        hh = harmonic_average(h_K[oi], h_K[ni])
        gamma[inner] = gamma0 * np.maximum(dh, kh) * p2 / hh
    dirichlet = fa["tag"] == _DIR
    od = o[dirichlet]
    gamma[dirichlet] = gamma0 * np.maximum(d_K[od], k_K[od]) * p2 / h_K[od]
    return PenaltyParams(gamma0, space.p, d_K, k_K, gamma)


# ---------------------------------------------------------------- helpers

def block_diagonal(space: DgSpace, blocks):
    E, n = space.n_elements, space.n_local
    return sp.bsr_matrix((blocks, np.arange(E), np.arange(E + 1)), shape=(E * n, E * n)).tocsr()


def _scatter(space, dofs, local):
    rows = np.repeat(dofs[:, :, None], dofs.shape[1], axis=2)
    cols = np.repeat(dofs[:, None, :], dofs.shape[1], axis=1)
    N = space.n_dofs
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(N, N)).tocsr()


def _face_dofs(space, elements):
    return space.offsets[elements][:, None] + np.arange(space.n_local)[None, :]


def _check_spd(Dq):
    if np.any(min_eigenvalue_2x2(Dq) <= 0) or np.any(np.abs(Dq[..., 0, 1] - Dq[..., 1, 0]) > 1e-12 * np.abs(Dq).max()):
        raise CoefficientError("diffusion tensor is not symmetric positive definite at a quadrature point")


# ---------------------------------------------------------------- matrices

def assemble_mass(space: DgSpace):
    return block_diagonal(space, space.mass_blocks)


def assemble_reaction(space: DgSpace, k, t=0.0):
    """Matrix of (k u, v); serves both linear reaction matrices."""
    blocks = np.empty((space.n_elements, space.n_local, space.n_local))
    for blk in space.blocks:
        kq = sample(k, blk.points, t, blk.element_ids())
        if np.any(kq < 0):
            warnings.warn("negative reaction coefficient sampled at a quadrature point", RuntimeWarning, stacklevel=2)
        B = space.block_values(blk)
        blocks[blk.elements] = weighted_gram(blk.weights * kq, B, B)
    return block_diagonal(space, blocks)


def stiffness_parts(space: DgSpace, D, penalty: PenaltyParams, t=0.0):
    """Volume, jump-penalty and consistency parts of the SIPG matrix."""
    E, n = space.n_elements, space.n_local
    vol = np.empty((E, n, n))
    for blk in space.blocks:
        Dq = sample(D, blk.points, t, blk.element_ids())
        _check_spd(Dq)
        G = space.block_grads(blk)
        DG = np.einsum("eqkl,eqjl->eqjk", Dq, G)
        vol[blk.elements] = np.einsum("eq,eqik,eqjk->eij", blk.weights, G, DG, optimize=True)
    volume = block_diagonal(space, vol)

    fd = space.faces
    w, nrm = fd["weights"], fd["normal"]
    inner = fd["neighbor"] >= 0
    dirichlet = fd["tag"] == _DIR
    pen_parts, con_parts = [], []

    if inner.any():
        idx = np.flatnonzero(inner)
        o, nb = fd["owner"][idx], fd["neighbor"][idx]
        pts = fd["points"][idx]
        Do = sample(D, pts, t, np.broadcast_to(o[:, None], pts.shape[:2]))
        Dn = sample(D, pts, t, np.broadcast_to(nb[:, None], pts.shape[:2]))
        flux_o = np.einsum("fqkl,fqil,fk->fqi", Do, fd["grads_owner"][idx], nrm[idx])
        flux_n = np.einsum("fqkl,fqil,fk->fqi", Dn, fd["grads_nbr"][idx], nrm[idx])
        J = np.concatenate([fd["vals_owner"][idx], -fd["vals_nbr"][idx]], axis=2)
        Fl = 0.5 * np.concatenate([flux_o, flux_n], axis=2)
        dofs = np.concatenate([_face_dofs(space, o), _face_dofs(space, nb)], axis=1)
        wf = w[idx]
        P = weighted_gram(wf * penalty.face_gamma[idx][:, None], J, J)
        C1 = weighted_gram(wf, J, Fl)
        pen_parts.append(_scatter(space, dofs, P))
        con_parts.append(_scatter(space, dofs, -(C1 + C1.transpose(0, 2, 1))))

    if dirichlet.any():
        idx = np.flatnonzero(dirichlet)
        o = fd["owner"][idx]
        pts = fd["points"][idx]
        Do = sample(D, pts, t, np.broadcast_to(o[:, None], pts.shape[:2]))
        flux = np.einsum("fqkl,fqil,fk->fqi", Do, fd["grads_owner"][idx], nrm[idx])
        J = fd["vals_owner"][idx]
        dofs = _face_dofs(space, o)
        wf = w[idx]
        P = weighted_gram(wf * penalty.face_gamma[idx][:, None], J, J)
        C1 = weighted_gram(wf, J, flux)
        pen_parts.append(_scatter(space, dofs, P))
        con_parts.append(_scatter(space, dofs, -(C1 + C1.transpose(0, 2, 1))))

    zero = sp.csr_matrix((space.n_dofs, space.n_dofs))
    return volume, sum(pen_parts, zero), sum(con_parts, zero)


def assemble_stiffness(space: DgSpace, D, penalty: PenaltyParams, t=0.0):
    volume, pen, con = stiffness_parts(space, D, penalty, t)
    return (volume + pen + con).tocsr()


class NonlinearReaction:
    """R_N(phi) with entries (k12 phi_h phi_j, phi_i), rebuilt per call."""

    def __init__(self, space: DgSpace, k12):
        self.space = space
        self._wk = [blk.weights * sample(k12, blk.points, 0.0, blk.element_ids()) for blk in space.blocks]

    def blocks(self, phi):
        space = self.space
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (space.n_dofs,):
            raise ValueError(f"coefficient vector has length {phi.size}, expected {space.n_dofs}")
        u = space.local(phi)
        out = np.empty((space.n_elements, space.n_local, space.n_local))
        for blk, wk in zip(space.blocks, self._wk):
            B = space.block_values(blk)
            uq = contract(B, u[blk.elements])
            out[blk.elements] = np.matmul(B.transpose(0, 2, 1) * (wk * uq)[:, None, :], B)
        return out

    def __call__(self, phi):
        return block_diagonal(self.space, self.blocks(phi))


def assemble_nonlinear_reaction(space: DgSpace, k12, phi):
    return NonlinearReaction(space, k12)(phi)


class LoadAssembler:
    """Load vector t -> (f(t), phi_i) plus the Dirichlet lifting terms."""

    def __init__(self, space: DgSpace, f, g_D, D, penalty: PenaltyParams):
        self.space, self.f, self.g_D = space, f, g_D
        fd = space.faces
        self._dir = np.flatnonzero(fd["tag"] == _DIR)
        if len(self._dir):
            idx = self._dir
            o = fd["owner"][idx]
            pts = fd["points"][idx]
            Do = sample(D, pts, 0.0, np.broadcast_to(o[:, None], pts.shape[:2]))
            self._flux = np.einsum("fqkl,fqil,fk->fqi", Do, fd["grads_owner"][idx], fd["normal"][idx])
            self._gamma = penalty.face_gamma[idx]
            self._pts = pts
            self._w = fd["weights"][idx]
            self._vals = fd["vals_owner"][idx]
            self._dofs = _face_dofs(space, o)

    def __call__(self, t):
        space = self.space
        b = np.zeros((space.n_elements, space.n_local))
        if self.f is not None:
            for blk in space.blocks:
                fq = sample(self.f, blk.points, t, blk.element_ids())
                b[blk.elements] = contract(space.block_values(blk).transpose(0, 2, 1), blk.weights * fq)
        b = b.ravel()
        if len(self._dir) and self.g_D is not None:
            g = sample(self.g_D, self._pts, t)
            local = np.einsum("fq,fqi->fi", self._w * g * self._gamma[:, None], self._vals) \
                - np.einsum("fq,fqi->fi", self._w * g, self._flux)
            np.add.at(b, self._dofs.ravel(), local.ravel())
        return b


def assemble_load(space: DgSpace, f, t, g_D, D, penalty: PenaltyParams):
    return LoadAssembler(space, f, g_D, D, penalty)(t)


@dataclass
class AlgebraicSystem:
    space: DgSpace
    M: sp.csr_matrix
    A: sp.csr_matrix
    R_L: sp.csr_matrix
    R_Lt: sp.csr_matrix
    nonlinear: NonlinearReaction
    load_c: Callable[[float], np.ndarray]
    load_q: Callable[[float], np.ndarray]
    penalty: PenaltyParams
    D: object = None

    def R_N(self, phi):
        return self.nonlinear(phi)


def build_system(space: DgSpace, params, gamma0=10.0) -> AlgebraicSystem:
    """Assemble every time-independent matrix and the load callbacks for ``params``."""
    D = params.diffusion.field()
    pen = compute_penalty(space, D, params.k1, params.k1t, params.k12, gamma0)
    M = assemble_mass(space)
    A = assemble_stiffness(space, D, pen)
    R_L = assemble_reaction(space, params.k1)
    R_Lt = assemble_reaction(space, params.k1t)
    return AlgebraicSystem(
        space, M, A, R_L, R_Lt, NonlinearReaction(space, params.k12),
        LoadAssembler(space, params.f_c, params.c_D, D, pen),
        LoadAssembler(space, params.f_q, params.q_D, D, pen),
        pen, D)


def dump_coo(matrix, path):
    """Write a sparse matrix as 'i j value' lines."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for i, j, v in zip(m.row.tolist(), m.col.tolist(), m.data.tolist()):
            fh.write(f"{i} {j} {v!r}\n")
