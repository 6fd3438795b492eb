"""PolyDG solver for the heterodimer reaction-diffusion system."""
from .analysis import (EnergyAccumulator, ErrorRecord, WaveTrace, dg_norm, error_norms, estimate_wave_speed,
                       fit_rates)
from .dgspace import DgSpace
from .forms import AlgebraicSystem, build_system, penalty_coefficient
from .mesh import DIRICHLET, INTERIOR, NEUMANN, PolyMesh, check_regularity, load_mesh, save_mesh
from .meshgen import agglomerate, disk_triangle_mesh, generate_voronoi_mesh
from .model import DiffusionSpec, HeterodimerParams, diagnostics
from .timestep import StatePair, Stepper, ThetaScheme, solve_transient

__version__ = "0.1.0"
