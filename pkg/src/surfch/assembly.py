"""P1 finite-element assembly of the surface mass, stiffness and transport forms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import SparseMatrix
from .mesh import AREA_TOL, MeshError, TriSurfaceMesh, VelocityField, midedge_divergence

# local mass matrix of a unit-area triangle
_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class NodalField(np.ndarray):
    """Vector of P1 coefficients tagged with the time of the mesh it lives on."""

    def __new__(cls, values, time: float = 0.0):
        obj = np.array(values, dtype=float).view(cls)
        obj.time = float(time)
        return obj

    def __array_finalize__(self, obj):
        self.time = getattr(obj, "time", 0.0)


def _check_elements(mesh: TriSurfaceMesh) -> None:
    bad = np.flatnonzero(mesh.areas <= AREA_TOL)
    if bad.size:
        raise MeshError(f"degenerate element(s) {bad[:5].tolist()}")


def _element_stiffness(mesh: TriSurfaceMesh) -> np.ndarray:
    g = mesh.gradients
    return mesh.areas[:, None, None] * np.einsum("tik,tjk->tij", g, g)


def _scatter(mesh: TriSurfaceMesh, local: np.ndarray) -> SparseMatrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    n = mesh.n_vertices
    return SparseMatrix.from_triplets(rows, cols, local.reshape(len(t), 9), (n, n))


def _symmetrize(A: SparseMatrix) -> SparseMatrix:
    # summation order can differ between (i, j) and (j, i); restore exact symmetry
    return (A + A.T) * 0.5


@dataclass(frozen=True, eq=False)
class FormSet:
    """Assembled forms on one mesh snapshot.

    ``M`` consistent mass, ``lumped`` diagonal of the lumped mass, ``A``
    stiffness and ``G`` the mass weighted by the tangential divergence of the
    velocity.
    """

    mesh: TriSurfaceMesh
    M: SparseMatrix
    lumped: np.ndarray
    A: SparseMatrix
    G: SparseMatrix

    @property
    def time(self) -> float:
        return self.mesh.time

    @property
    def ML(self) -> SparseMatrix:
        return SparseMatrix.diagonal_matrix(self.lumped)

    @property
    def area(self) -> float:
        return float(self.lumped.sum())


def assemble_forms(mesh: TriSurfaceMesh, vel: VelocityField) -> FormSet:
    _check_elements(mesh)
    area = mesh.areas
    M = _symmetrize(_scatter(mesh, area[:, None, None] * _LOCAL_MASS))
    A = _symmetrize(_scatter(mesh, _element_stiffness(mesh)))
    lumped = np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.n_vertices)
    lumped.setflags(write=False)

    # mid-edge rule: hat values at the point opposite vertex q are 1/2 off q, 0 at q
    div = midedge_divergence(mesh, vel)  # (T, 3)
    phi = 0.5 * (1.0 - np.eye(3))  # phi[q, i]
    local_g = (area / 3.0)[:, None, None] * np.einsum("tq,qi,qj->tij", div, phi, phi)
    G = _symmetrize(_scatter(mesh, local_g))
    return FormSet(mesh, M, lumped, A, G)


def element_average(mesh: TriSurfaceMesh, values) -> np.ndarray:
    return np.asarray(values, dtype=float)[mesh.triangles].mean(axis=1)


def assemble_weighted_stiffness(mesh: TriSurfaceMesh, coeff, pointwise_map: Callable = None) -> SparseMatrix:
    """Stiffness matrix with a piecewise-constant coefficient.

    On each element the coefficient is the mean of ``pointwise_map(coeff)``
    over the three vertices.
    """
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != (mesh.n_vertices,):
        raise ValueError("coefficient length does not match mesh")
    values = coeff if pointwise_map is None else np.asarray(pointwise_map(coeff), dtype=float)
    return weighted_stiffness_from_elements(mesh, element_average(mesh, values))


def weighted_stiffness_from_elements(mesh: TriSurfaceMesh, element_coeff) -> SparseMatrix:
    _check_elements(mesh)
    local = np.asarray(element_coeff, dtype=float)[:, None, None] * _element_stiffness(mesh)
    return _symmetrize(_scatter(mesh, local))


def discrete_laplacian(forms: FormSet, u) -> NodalField:
    """Lumped-mass discrete Laplace-Beltrami operator, ``-M_L^{-1} A u``."""
    return NodalField(-(forms.A @ np.asarray(u, dtype=float)) / forms.lumped, forms.time)
