"""Building blocks shared by the experiment scenarios."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .analysis import EnergyAccumulator, ErrorRecord
from .dgspace import DgSpace
from .forms import AlgebraicSystem, build_system
from .manufactured import ManufacturedSolution
from .mesh import DIRICHLET, PolyMesh
from .meshgen import generate_voronoi_mesh
from .timestep import Stepper, StatePair, ThetaScheme, solve_transient

log = logging.getLogger(__name__)


@lru_cache(maxsize=32)
def voronoi_mesh(domain=(0.0, 1.0, 0.0, 1.0), n_elements=100, seed=1, boundary=DIRICHLET, lloyd_iters=100) -> PolyMesh:
    """Memoised Lloyd-Voronoi mesh; generation dominates small runs otherwise."""
    return generate_voronoi_mesh(tuple(domain), n_elements, seed=seed, lloyd_iters=lloyd_iters, boundary_tag=boundary)


def initial_state(space: DgSpace, c0, q0) -> StatePair:
    return StatePair(space.l2_project(c0, 0.0), space.l2_project(q0, 0.0), 0.0, 0)


@dataclass
class ManufacturedRun:
    space: DgSpace
    system: AlgebraicSystem
    state: StatePair
    energy_c: EnergyAccumulator
    energy_q: EnergyAccumulator
    seconds: float
    records: list = field(default_factory=list)


def solve_manufactured(mesh: PolyMesh, p: int, solution: ManufacturedSolution, scheme: ThetaScheme, T: float,
                       gamma0=10.0, solver="direct", callbacks=(), test="", coefficients=None) -> ManufacturedRun:
    """Run the Dirichlet problem with exact solution ``solution`` and measure its errors.

    ``coefficients`` are keyword arguments for :meth:`ManufacturedSolution.params`.
    Records for c and q are returned in ``records``.
    """
    t0 = time.perf_counter()
    params = solution.params(**(coefficients or {}))
    space = DgSpace(mesh, p)
    system = build_system(space, params, gamma0)
    state0 = initial_state(space, params.c_0, params.q_0)
    acc_c = EnergyAccumulator(space, system.D, system.penalty, solution.c, solution.grad_c, lambda s: s.C)
    acc_q = EnergyAccumulator(space, system.D, system.penalty, solution.q, solution.grad_q, lambda s: s.Q)
    state = solve_transient(system, scheme, state0, T, [acc_c, acc_q, *callbacks], solver=solver)
    run = ManufacturedRun(space, system, state, acc_c, acc_q, time.perf_counter() - t0)
    for name, acc in (("c", acc_c), ("q", acc_q)):
        run.records.append(ErrorRecord(test, p, mesh.n_elements, mesh.h, scheme.dt, T, name,
                                       acc.last.l2, acc.last.dg, acc.value, space.n_dofs))
    log.info("%s p=%d n_el=%d dt=%g: c energy %.3e, %.1fs", test, p, mesh.n_elements, scheme.dt,
             acc_c.value, run.seconds)
    return run
