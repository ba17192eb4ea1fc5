"""Cahn-Hilliard equation on evolving triangulated surfaces with degenerate mobility."""

from .assembly import FormSet, NodalField, assemble_forms, assemble_weighted_stiffness, discrete_laplacian
from .materials import MobilitySpec, PotentialSpec, RegularizedMaterial
from .mesh import TriSurfaceMesh, VelocityField, advance_mesh, build_icosphere
from .solver import SimState, SolverConfig, initial_state, run, step
from .weak_norm import WeakNormContext, green_apply, weak_norm

__version__ = "0.1.0"
